use std::fs;
use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"ASMD";
const VERSION: u32 = 1;

/// Writes the 16-byte header (magic, version, N, side), the images as
/// little-endian f32, then the labels as little-endian f32.
pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * (ds.images().numel() + ds.len()));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, ds.len() as u32, ds.side() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.images().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in ds.labels() {
        out.extend_from_slice(&(l as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(bytes.len() as u64, "truncated dataset header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad dataset magic"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    if word(4) != VERSION as usize {
        return Err(Error::format(4, format!("unsupported dataset version {}", word(4))));
    }
    let (n, side) = (word(8), word(12));
    let count = n * 3 * side * side;
    let need = 16 + 4 * (count + n);
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need) as u64,
            format!("dataset body is {} bytes, expected {}", bytes.len() - 16, need - 16),
        ));
    }
    let floats: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels = floats[count..]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(Error::format((16 + 4 * (count + i)) as u64, format!("bad label {l}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let images = Tensor::new(&[n, 3, side, side], floats[..count].to_vec())?;
    LabeledDataset::new(images, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.asmd");
        let imgs = Tensor::new(&[2, 3, 2, 2], (0..24).map(|i| i as f32 / 23.0).collect()).unwrap();
        let ds = LabeledDataset::new(imgs, vec![7, 2], Split::Train).unwrap();
        save_dataset(&p, &ds).unwrap();
        assert_eq!(load_dataset(&p, Split::Train).unwrap(), ds);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(40);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_dataset(&p, Split::Train), Err(Error::Format { .. })));
    }
}
