use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::data::corpus::ValueNoise;
use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::miner::AnchorSample;
use crate::numcore::Tensor;

/// Synthetic appearance shift applied to every image independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    pub hue_deg: f64,
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    /// Blend weight of a value-noise texture overlay, in [0, 1].
    pub texture: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        ShiftSpec {
            hue_deg: 0.0,
            gain: [1.0; 3],
            bias: [0.0; 3],
            texture: 0.0,
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.hue_deg, self.texture, self.noise_std]
            .iter()
            .chain(&self.gain)
            .chain(&self.bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("shift", "shift parameters must be finite"));
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return Err(Error::config("shift_texture", "must lie in [0, 1]"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("shift_noise_std", "must be non-negative"));
        }
        Ok(())
    }

    /// Rotation about the grey axis.
    fn hue_matrix(&self) -> [[f64; 3]; 3] {
        let a = self.hue_deg.to_radians();
        let (c, s) = (a.cos(), a.sin());
        let k = (1.0 - c) / 3.0;
        let r = s / 3f64.sqrt();
        [
            [c + k, k - r, k + r],
            [k + r, c + k, k - r],
            [k - r, k + r, c + k],
        ]
    }

    /// Texture palette shared by every image under this spec.
    fn palette(&self) -> ([f64; 3], [f64; 3]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let a = std::array::from_fn(|_| rng.gen::<f64>());
        let b = std::array::from_fn(|_| rng.gen::<f64>());
        (a, b)
    }
}

fn image_rng(seed: u64, pixels: &[f32]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for v in pixels {
        h.update(v.to_le_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Applies `spec` to every image. Each image's random draws are keyed on the
/// spec seed and its own pixels, so shifting commutes with subsetting.
pub fn apply_shift(ds: &LabeledDataset, spec: &ShiftSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let side = ds.side();
    let plane = side * side;
    let m = spec.hue_matrix();
    let (ca, cb) = spec.palette();
    let mut data = ds.images().data().to_vec();
    for img in data.chunks_mut(3 * plane) {
        let mut rng = image_rng(spec.seed, img);
        let tex = (spec.texture > 0.0).then(|| ValueNoise::new(4, &mut rng));
        for p in 0..plane {
            let px = [img[p] as f64, img[plane + p] as f64, img[2 * plane + p] as f64];
            let g: [f64; 3] = std::array::from_fn(|c| spec.gain[c] * px[c] + spec.bias[c]);
            let mut h: [f64; 3] = std::array::from_fn(|r| m[r][0] * g[0] + m[r][1] * g[1] + m[r][2] * g[2]);
            if let Some(t) = &tex {
                let v = t.at((p % side) as f32 / side as f32, (p / side) as f32 / side as f32) as f64;
                for c in 0..3 {
                    let tc = ca[c] * (1.0 - v) + cb[c] * v;
                    h[c] = (1.0 - spec.texture) * h[c] + spec.texture * tc;
                }
            }
            for (c, hc) in h.iter().enumerate() {
                let noise = if spec.noise_std > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    spec.noise_std * n
                } else {
                    0.0
                };
                img[c * plane + p] = (hc + noise).clamp(0.0, 1.0) as f32;
            }
        }
    }
    let images = Tensor::new(ds.images().shape(), data)?;
    LabeledDataset::new(images, ds.labels().to_vec(), ds.split)
}

/// Seeded shuffle of a shifted target set: the first sample becomes the one
/// anchor, the rest form the held-out evaluation set.
pub fn split_target(target: &LabeledDataset, seed: u64) -> Result<(AnchorSample, LabeledDataset)> {
    if target.len() < 2 {
        return Err(Error::contract("target set needs an anchor and at least one held-out sample"));
    }
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (anchor_img, _) = target.gather::<f32>(&order[..1])?;
    let mut heldout = target.subset(&order[1..])?;
    heldout.split = Split::Heldout;
    let shape = anchor_img.shape()[1..].to_vec();
    Ok((AnchorSample::new(anchor_img.reshape(&shape)?)?, heldout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds() -> LabeledDataset {
        let data: Vec<f32> = (0..4 * 3 * 16).map(|i| (i % 17) as f32 / 16.0).collect();
        LabeledDataset::new(Tensor::new(&[4, 3, 4, 4], data).unwrap(), vec![0, 1, 2, 3], Split::Train).unwrap()
    }

    fn strong() -> ShiftSpec {
        ShiftSpec {
            hue_deg: 70.0,
            gain: [-0.8, 0.6, 1.1],
            bias: [0.9, 0.1, -0.05],
            texture: 0.3,
            noise_std: 0.05,
            seed: 4,
        }
    }

    #[test]
    fn identity_spec_is_exact() {
        let d = ds();
        assert_eq!(apply_shift(&d, &ShiftSpec::identity()).unwrap(), d);
    }

    #[test]
    fn shift_is_deterministic_and_bounded() {
        let d = ds();
        let a = apply_shift(&d, &strong()).unwrap();
        assert_eq!(a, apply_shift(&d, &strong()).unwrap());
        assert_eq!(a.labels(), d.labels());
        assert_ne!(a.images(), d.images());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shift_commutes_with_subsetting() {
        let d = ds();
        let idx = [3, 1];
        let a = apply_shift(&d, &strong()).unwrap().subset(&idx).unwrap();
        let b = apply_shift(&d.subset(&idx).unwrap(), &strong()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_yields_one_anchor() {
        let (anchor, rest) = split_target(&ds(), 1).unwrap();
        assert_eq!(anchor.image().shape(), &[3, 4, 4]);
        assert_eq!(rest.len(), 3);
        assert_eq!(rest.split, Split::Heldout);
    }
}
