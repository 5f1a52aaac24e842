use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(u64),
    Num(f64),
    Text(String),
}

impl Field {
    pub fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Num(v) => sig9(*v),
            Field::Text(s) => s.clone(),
        }
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Nine significant digits, `%.9g` style: positional for decimal exponents
/// in [-5, 9), scientific otherwise, trailing zeros dropped.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return format!("{}e{}{:02}", trim_zeros(mant), if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

/// Appends rows to a CSV file, writing the header first if the file is new
/// or empty. An existing file must carry the same header.
pub fn write_metrics(path: &Path, header: &[&str], rows: &[Vec<Field>]) -> Result<()> {
    let head = header.join(",");
    let existing = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = String::new();
    if existing.is_empty() {
        out.push_str(&head);
        out.push('\n');
    } else if existing.lines().next() != Some(head.as_str()) {
        return Err(Error::format(0, format!("{} has a different header", path.display())));
    }
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::contract(format!("row of {} fields for {} columns", row.len(), header.len())));
        }
        out.push_str(&row.iter().map(Field::render).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.000123456789), "0.000123456789");
        assert_eq!(sig9(0.00012345678951), "0.00012345679");
        assert_eq!(sig9(0.000123456789123), "0.000123456789");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(sig9(1.5e-7), "1.5e-07");
        assert_eq!(sig9(2.302585092994046), "2.30258509");
    }

    #[test]
    fn header_once_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &["a", "b"], &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n");
        write_metrics(&p, &["a", "b"], &[vec![Field::Int(1), Field::Num(0.5)]]).unwrap();
        write_metrics(&p, &["a", "b"], &[vec![Field::Int(2), Field::Text("x".into())]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,0.5\n2,x\n");
        assert!(write_metrics(&p, &["a", "c"], &[]).is_err());
    }
}
