use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{DType, Element, ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"ASMC";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENTUM_SUFFIX: &str = "@momentum";

/// Encodes parameters and their momentum buffers as a named tensor table.
pub fn encode_checkpoint<T: Element>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&((2 * params.len()) as u32).to_le_bytes());
    for (name, p) in params.iter() {
        for (entry, t) in [(name.to_string(), &p.value), (format!("{name}{MOMENTUM_SUFFIX}"), &p.momentum)] {
            out.extend_from_slice(&(entry.len() as u16).to_le_bytes());
            out.extend_from_slice(entry.as_bytes());
            out.push(T::DTYPE as u8);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries: Vec<(String, Tensor<T>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at as u64 + 2, "tensor name is not UTF-8"))?
            .to_string();
        let tag_at = r.pos;
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::format(tag_at as u64, format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::format(
                tag_at as u64,
                format!("tensor `{name}` is {dtype:?}, expected {:?}", T::DTYPE),
            ));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let shape = (0..rank).map(|_| Ok(r.u32("dims")? as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * dtype.size(), "payload")?;
        let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::format(at as u64, e.to_string()))?;
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::format(at as u64, format!("duplicate tensor `{name}`")));
        }
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last entry"));
    }
    let mut params = ParamSet::new();
    let mut momenta = Vec::new();
    for (name, t) in entries {
        match name.strip_suffix(MOMENTUM_SUFFIX) {
            Some(base) => momenta.push((base.to_string(), t)),
            None => params.insert(name, t)?,
        }
    }
    for (name, m) in momenta {
        if params.get(&name).is_none() {
            return Err(Error::format(8, format!("momentum for unknown tensor `{name}`")));
        }
        params.set_momentum(&name, m)?;
    }
    Ok(params)
}

pub fn save_checkpoint<T: Element>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<ParamSet<T>> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Flattens several parameter sets into one, prefixing names with `prefix/`.
pub fn merge_prefixed<T: Element>(parts: &[(&str, &ParamSet<T>)]) -> Result<ParamSet<T>> {
    let mut out = ParamSet::new();
    for (prefix, ps) in parts {
        for (name, p) in ps.iter() {
            let full = format!("{prefix}/{name}");
            out.insert(full.clone(), p.value.clone())?;
            out.set_momentum(&full, p.momentum.clone())?;
        }
    }
    Ok(out)
}

/// Extracts the entries under `prefix/`, stripping the prefix.
pub fn take_prefixed<T: Element>(all: &ParamSet<T>, prefix: &str) -> Result<ParamSet<T>> {
    let mut out = ParamSet::new();
    let lead = format!("{prefix}/");
    for (name, p) in all.iter() {
        if let Some(rest) = name.strip_prefix(&lead) {
            out.insert(rest, p.value.clone())?;
            out.set_momentum(rest, p.momentum.clone())?;
        }
    }
    if out.is_empty() {
        return Err(Error::contract(format!("checkpoint has no `{prefix}` entries")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("a.w", Tensor::from_f64(&[2, 2], &[1.0, -2.5, 1e-300, 3.0]).unwrap()).unwrap();
        ps.insert("a.b", Tensor::from_f64(&[2], &[0.1, 0.2]).unwrap()).unwrap();
        ps.set_momentum("a.w", Tensor::from_f64(&[2, 2], &[0.5, 0.0, -0.25, 7.0]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn round_trip_is_exact() {
        let ps = sample();
        let back: ParamSet<f64> = decode_checkpoint(&encode_checkpoint(&ps)).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn corruption_is_reported_with_offset() {
        let mut bytes = encode_checkpoint(&sample());
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint::<f64>(short), Err(Error::Format { .. })));
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format { .. })));
        bytes[0] ^= 0xff;
        assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn prefixes_split_back() {
        let ps = sample();
        let merged = merge_prefixed(&[("X", &ps), ("Y", &ps)]).unwrap();
        assert_eq!(merged.len(), 4);
        assert_eq!(take_prefixed(&merged, "Y").unwrap(), ps);
        assert!(take_prefixed(&merged, "Z").is_err());
    }
}
