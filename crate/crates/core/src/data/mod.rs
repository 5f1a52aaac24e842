//! Dataset ingestion and synthesis.

mod batch;
mod corpus;
mod digits;
mod idx;
mod shift;
mod store;

pub use batch::BatchSampler;
pub use corpus::gen_style_corpus;
pub use digits::{render_digits, DIGIT_SIDE};
pub use idx::{decode_idx, encode_idx, load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use shift::{apply_shift, split_target, ShiftSpec};
pub use store::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::numcore::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

/// Images (N, 3, H, W) with values in [0, 1] and one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, split: Split) -> Result<Self> {
        match *images.shape() {
            [n, 3, h, w] if h == w => {
                if n != labels.len() {
                    return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
                }
            }
            ref s => return Err(Error::shape(format!("dataset images must be (N,3,S,S), got {s:?}"))),
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(LabeledDataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= classes) {
            Some(y) => Err(Error::contract(format!("label {y} outside [0, {classes})"))),
            None => Ok(()),
        }
    }

    /// Images (converted to `T`) and labels at the given indices.
    pub fn gather<T: Element>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let x = self.images.select_rows(idx)?.cast();
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            images: self.images.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        })
    }

    /// Consecutive range `[start, start + len)` as its own dataset.
    pub fn range(&self, start: usize, len: usize, split: Split) -> Result<LabeledDataset> {
        let idx: Vec<usize> = (start..start + len).collect();
        if start + len > self.len() {
            return Err(Error::contract(format!(
                "range {start}..{} exceeds dataset of {}",
                start + len,
                self.len()
            )));
        }
        let mut out = self.subset(&idx)?;
        out.split = split;
        Ok(out)
    }
}
