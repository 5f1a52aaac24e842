use std::fs;
use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(offset as u64, "truncated header"))?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file: returns (count, rows, cols, pixels).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated image data: need {} bytes, file has {}", 16 + need, bytes.len()),
        ));
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated label data: need {} bytes, file has {}", 8 + n, bytes.len()),
        ));
    }
    Ok(&body[..n])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair: grayscale replicated to RGB, scaled to
/// [0, 1], nearest-neighbour resized to `side`.
pub fn load_idx(images_path: &Path, labels_path: &Path, side: usize) -> Result<LabeledDataset> {
    decode_idx(&read(images_path)?, &read(labels_path)?, side)
}

/// In-memory form of [`load_idx`].
pub fn decode_idx(img_bytes: &[u8], lbl_bytes: &[u8], side: usize) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = parse_idx_images(img_bytes)?;
    let labels = parse_idx_labels(lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::format(
            4,
            format!("{n} images but {} labels", labels.len()),
        ));
    }
    if n == 0 || rows == 0 || cols == 0 || side == 0 {
        return Err(Error::format(4, "empty image file"));
    }
    let plane = side * side;
    let mut data = vec![0.0f32; n * 3 * plane];
    for i in 0..n {
        let src = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let dst = &mut data[i * 3 * plane..(i + 1) * 3 * plane];
        for y in 0..side {
            let sy = y * rows / side;
            for x in 0..side {
                let sx = x * cols / side;
                let v = src[sy * cols + sx] as f32 / 255.0;
                for c in 0..3 {
                    dst[c * plane + y * side + x] = v;
                }
            }
        }
    }
    let images = Tensor::new(&[n, 3, side, side], data)?;
    LabeledDataset::new(images, labels.iter().map(|&l| l as usize).collect(), Split::Train)
}

/// Encodes an IDX image/label pair (`pixels` holds `n * rows * cols` bytes).
pub fn encode_idx(pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    let n = labels.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::contract("pixel buffer does not match label count"));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lbl = Vec::with_capacity(8 + n);
    for v in [LABELS_MAGIC, n as u32] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend_from_slice(labels);
    Ok((img, lbl))
}

/// Writes an IDX image/label pair.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    pixels: &[u8],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> Result<()> {
    let (img, lbl) = encode_idx(pixels, rows, cols, labels)?;
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lbl).map_err(|e| Error::io(labels_path, e))
}
