use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Element, Tensor};

/// Binary P6 encoding of a (3, H, W) image in [0, 1].
pub fn encode_ppm<T: Element>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::shape(format!("PPM needs (3, H, W), got {s:?}"))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    let plane = h * w;
    for p in 0..plane {
        for c in 0..3 {
            let v = d[c * plane + p].to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

/// Reads back a P6 file written by `encode_ppm`: returns (width, height, RGB bytes).
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P6" {
        return Err(Error::format(0, "not a P6 image"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(0, format!("bad PPM field `{s}`")));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(Error::format(0, "only 8-bit PPM is supported"));
    }
    let body = &bytes[pos + 1..];
    if body.len() != 3 * w * h {
        return Err(Error::format(pos as u64 + 1, "PPM body size mismatch"));
    }
    Ok((w, h, body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::new(&[3, 1, 2], vec![0.0f32, 1.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        let (w, h, body) = decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(body, &[0, 128, 255, 255, 64, 0]);
    }
}
