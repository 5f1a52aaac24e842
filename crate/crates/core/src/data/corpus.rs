use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn contrasting_pair(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    loop {
        let a: [f32; 3] = std::array::from_fn(|_| rng.gen());
        let b: [f32; 3] = std::array::from_fn(|_| rng.gen());
        if a.iter().zip(&b).all(|(x, y)| (x - y).abs() >= 0.15) {
            return (a, b);
        }
    }
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise on a `cells x cells` lattice, sampled at (u, v) in [0, 1).
pub(crate) struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    pub(crate) fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
        ValueNoise { cells, lattice }
    }

    pub(crate) fn at(&self, u: f32, v: f32) -> f32 {
        let (fx, fy) = (u * self.cells as f32, v * self.cells as f32);
        let (ix, iy) = ((fx as usize).min(self.cells - 1), (fy as usize).min(self.cells - 1));
        let (tx, ty) = (smooth(fx - ix as f32), smooth(fy - iy as f32));
        let w = self.cells + 1;
        let l = |x: usize, y: usize| self.lattice[y * w + x];
        let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
        let bot = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn pattern(kind: u32, side: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let coords = (0..side * side).map(move |i| {
        (
            (i % side) as f32 / side as f32,
            (i / side) as f32 / side as f32,
        )
    });
    match kind {
        0 => {
            let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let freq: f32 = rng.gen_range(1.5..6.0);
            let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
            let (c, s) = (angle.cos(), angle.sin());
            coords
                .map(|(u, v)| 0.5 + 0.5 * (std::f32::consts::TAU * freq * (u * c + v * s) + phase).sin())
                .collect()
        }
        1 => {
            let (cx, cy): (f32, f32) = (rng.gen(), rng.gen());
            let rings: f32 = rng.gen_range(0.0..3.0);
            coords
                .map(|(u, v)| {
                    let r = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                    0.5 * (r / 1.2).min(1.0) + 0.5 * (0.5 + 0.5 * (std::f32::consts::TAU * rings * r).cos())
                })
                .collect()
        }
        _ => {
            let coarse = ValueNoise::new(rng.gen_range(2..5), rng);
            let fine = ValueNoise::new(rng.gen_range(5..9), rng);
            let mix: f32 = rng.gen_range(0.2..0.5);
            coords
                .map(|(u, v)| (1.0 - mix) * coarse.at(u, v) + mix * fine.at(u, v))
                .collect()
        }
    }
}

/// `n` seeded procedural textures (stripes, radial gradients, value-noise
/// blends) as a (n, 3, side, side) tensor in [0, 1].
pub fn gen_style_corpus(n: usize, seed: u64, side: usize) -> Result<Tensor<f32>> {
    if n == 0 || side == 0 {
        return Err(Error::contract("style corpus needs n >= 1 and side >= 1"));
    }
    let plane = side * side;
    let mut data = Vec::with_capacity(n * 3 * plane);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let kind = rng.gen_range(0..3);
        let (a, b) = contrasting_pair(&mut rng);
        let mut t = pattern(kind, side, &mut rng);
        let (lo, hi) = t.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let span = (hi - lo).max(1e-6);
        t.iter_mut().for_each(|v| *v = (*v - lo) / span);
        for c in 0..3 {
            data.extend(t.iter().map(|&v| (a[c] * (1.0 - v) + b[c] * v).clamp(0.0, 1.0)));
        }
    }
    Tensor::new(&[n, 3, side, side], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let a = gen_style_corpus(512, 11, 16).unwrap();
        assert_eq!(a, gen_style_corpus(512, 11, 16).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for ch in a.data().chunks(256) {
            let m = ch.iter().sum::<f32>() / 256.0;
            let var = ch.iter().map(|v| (v - m).powi(2)).sum::<f32>() / 256.0;
            assert!(var > 1e-4, "channel variance {var}");
        }
    }
}
