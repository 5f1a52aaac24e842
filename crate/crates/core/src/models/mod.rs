//! Desk-scale network topologies: the generator components (encoder,
//! decoder, style-VAE encoder/decoder) and the task classifier.

mod generator;
mod task;

pub use generator::{decoder_forward, encoder_forward, Generator, GeneratorVars};
pub use task::{accuracy, argmax_rows, SourceClassifier, TaskModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::numcore::{Bound, Element, Graph, ParamSet, Tensor, Var};

/// Sizes shared by all networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Image side length (square RGB inputs); divisible by 4.
    pub side: usize,
    /// Encoder output channels `C`; style codes have length `2C`.
    pub channels: usize,
    /// Style-latent dimension `d`.
    pub latent_dim: usize,
    /// Number of classes `K`.
    pub classes: usize,
    /// Penultimate feature width `F` of the task model.
    pub feat_dim: usize,
    /// Hidden width of both style-VAE halves.
    pub vae_hidden: usize,
    /// Width of the task model's first conv layer (the second has twice this).
    pub task_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            side: 32,
            channels: 64,
            latent_dim: 16,
            classes: 10,
            feat_dim: 128,
            vae_hidden: 64,
            task_channels: 32,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("side", self.side),
            ("channels", self.channels),
            ("latent_dim", self.latent_dim),
            ("classes", self.classes),
            ("feat_dim", self.feat_dim),
            ("vae_hidden", self.vae_hidden),
            ("task_channels", self.task_channels),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("net config `{name}` must be positive")));
        }
        if self.side % 4 != 0 {
            return Err(Error::contract(format!("side {} is not divisible by 4", self.side)));
        }
        if self.classes < 2 {
            return Err(Error::contract("need at least two classes"));
        }
        Ok(())
    }

    /// Width of the first encoder stage (and last decoder hidden stage).
    pub fn half_channels(&self) -> usize {
        (self.channels / 2).max(1)
    }

    pub fn code_len(&self) -> usize {
        2 * self.channels
    }

    pub fn feature_side(&self) -> usize {
        self.side / 4
    }
}

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Init { rng }
    }

    /// He-normal conv weight (out, in, k, k) with zero bias.
    pub(crate) fn conv<T: Element>(&mut self, ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let w = (0..cout * cin * k * k)
            .map(|_| T::from_f64(normal.sample(&mut self.rng)).expect("finite"))
            .collect();
        ps.insert(format!("{name}.w"), Tensor::new(&[cout, cin, k, k], w)?)?;
        ps.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
    }

    /// Small-uniform fully connected weight (out, in) with zero bias.
    pub(crate) fn fc<T: Element>(&mut self, ps: &mut ParamSet<T>, name: &str, din: usize, dout: usize) -> Result<()> {
        let bound = 1.0 / (din as f64).sqrt();
        let uni = Uniform::new(-bound, bound);
        let w = (0..dout * din)
            .map(|_| T::from_f64(uni.sample(&mut self.rng)).expect("finite"))
            .collect();
        ps.insert(format!("{name}.w"), Tensor::new(&[dout, din], w)?)?;
        ps.insert(format!("{name}.b"), Tensor::zeros(&[dout]))
    }
}

pub(crate) fn conv(g: &mut Graph<impl Element>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    g.conv2d(x, p[&format!("{name}.w")[..]], p[&format!("{name}.b")[..]], stride, 1)
}

pub(crate) fn fc(g: &mut Graph<impl Element>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    g.linear(x, p[&format!("{name}.w")[..]], p[&format!("{name}.b")[..]])
}

/// Checks that an image batch is (B, 3, side, side).
pub(crate) fn check_images<T: Element>(cfg: &NetConfig, x: &Tensor<T>) -> Result<()> {
    match *x.shape() {
        [_, 3, h, w] if h == cfg.side && w == cfg.side => Ok(()),
        ref s => Err(Error::shape(format!(
            "expected images (B, 3, {0}, {0}), got {s:?}",
            cfg.side
        ))),
    }
}
