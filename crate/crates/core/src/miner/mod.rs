//! Adversarial style mining: the task model descends on the task and
//! consistency losses while the style latent ascends on the same loss.

mod check;
mod objective;
mod train;

pub use check::{check_mining_gradient, check_net};
pub use objective::{
    mine_step, mine_step_with, mining_loss_graph, AdversarialObjective, Evaluation, MineBatch, MineOutcome, MiningLoss,
    TaskObjective,
};
pub use train::{
    anchor_posterior, baseline_strategy, embeddings, evaluate, source_only, train_asm, train_strategy, MiningLogRow,
    MiningRun, MINING_LOG_HEADER,
};

use crate::error::{Error, Result};
use crate::numcore::{lit, Element, Tensor};

/// Divergence guard on the combined loss.
pub const DIVERGENCE_LIMIT: f64 = 50.0;

/// How consistency groups are formed from a stylized batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupMode {
    /// One group per content image: its stylized replicas.
    PerContent,
    /// The whole stylized batch forms a single group.
    WholeBatch,
}

impl GroupMode {
    pub fn name(self) -> &'static str {
        match self {
            GroupMode::PerContent => "per_content",
            GroupMode::WholeBatch => "whole_batch",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "per_content" => Ok(GroupMode::PerContent),
            "whole_batch" => Ok(GroupMode::WholeBatch),
            _ => Err(Error::config("consistency_groups", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Asm,
    Anchored,
    Random,
    SourceOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::SourceOnly, Strategy::Random, Strategy::Anchored, Strategy::Asm];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Asm => "asm",
            Strategy::Anchored => "anchored",
            Strategy::Random => "random",
            Strategy::SourceOnly => "source_only",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    /// Base learning rate of the task model.
    pub alpha: f64,
    /// Ascent step on the style latent.
    pub beta: f64,
    /// Searching depth: mining steps per source batch.
    pub depth_n: usize,
    /// Weight of the consistency loss.
    pub lambda: f64,
    /// Stylized images per step (`styles_per_content` replicas of each content).
    pub batch_size: usize,
    /// Outer iterations (source batches).
    pub total_iters: usize,
    pub styles_per_content: usize,
    pub warmup_iters: usize,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub groups: GroupMode,
    /// Also train on the unstylized source batch in every mining step.
    pub with_source: bool,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            alpha: 0.01,
            beta: 0.05,
            depth_n: 5,
            lambda: 2e-4,
            batch_size: 64,
            total_iters: 3000,
            styles_per_content: 2,
            warmup_iters: 0,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            groups: GroupMode::PerContent,
            with_source: false,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(k, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |k: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(k, format!("must be non-negative, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        non_negative("beta", self.beta)?;
        non_negative("lambda", self.lambda)?;
        positive("power", self.power)?;
        non_negative("momentum", self.momentum)?;
        non_negative("weight_decay", self.weight_decay)?;
        if self.depth_n == 0 {
            return Err(Error::config("depth_n", "must be at least 1"));
        }
        if self.total_iters == 0 {
            return Err(Error::config("total_iters", "must be at least 1"));
        }
        if self.warmup_iters >= self.total_iters {
            return Err(Error::config("warmup_iters", "must be below total_iters"));
        }
        if self.styles_per_content < 2 {
            return Err(Error::config("styles_per_content", "must be at least 2"));
        }
        if self.batch_size == 0 || self.batch_size % self.styles_per_content != 0 {
            return Err(Error::config(
                "batch_size",
                format!(
                    "must be a positive multiple of styles_per_content ({})",
                    self.styles_per_content
                ),
            ));
        }
        Ok(())
    }

    /// Distinct content images per batch.
    pub fn contents_per_batch(&self) -> usize {
        self.batch_size / self.styles_per_content
    }
}

/// The single unlabeled target-domain image, (3, H, W) in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSample {
    image: Tensor<f32>,
}

impl AnchorSample {
    pub fn new(image: Tensor<f32>) -> Result<Self> {
        match *image.shape() {
            [3, h, w] if h == w => {}
            ref s => return Err(Error::shape(format!("anchor must be (3, S, S), got {s:?}"))),
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("anchor pixels outside [0, 1]"));
        }
        Ok(AnchorSample { image })
    }

    pub fn image(&self) -> &Tensor<f32> {
        &self.image
    }

    /// As a batch of one, (1, 3, H, W).
    pub fn batch<T: Element>(&self) -> Tensor<T> {
        let mut shape = vec![1];
        shape.extend_from_slice(self.image.shape());
        self.image.clone().reshape(&shape).expect("same size").cast()
    }
}

/// Penultimate features of one content under `S` styles, with their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGroup<T> {
    z: Tensor<T>,
    z_bar: Vec<T>,
}

impl<T: Element> ConsistencyGroup<T> {
    pub fn new(z: Tensor<T>) -> Result<Self> {
        let (s, f) = match *z.shape() {
            [s, f] => (s, f),
            ref sh => return Err(Error::shape(format!("group features must be (S, F), got {sh:?}"))),
        };
        if s < 2 {
            return Err(Error::contract(format!("consistency group needs S >= 2, got {s}")));
        }
        let inv: T = lit(1.0 / s as f64);
        let z_bar = (0..f)
            .map(|j| (0..s).map(|i| z.data()[i * f + j]).sum::<T>() * inv)
            .collect();
        Ok(ConsistencyGroup { z, z_bar })
    }

    pub fn z(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn z_bar(&self) -> &[T] {
        &self.z_bar
    }

    /// `sum_i |z_i - z_bar| / S`.
    pub fn loss(&self) -> f64 {
        let f = self.z_bar.len();
        let s = self.z.shape()[0];
        let total: f64 = self
            .z
            .data()
            .chunks(f)
            .map(|row| {
                row.iter()
                    .zip(&self.z_bar)
                    .map(|(a, b)| (*a - *b).to_f64().expect("finite").powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total / s as f64
    }
}

/// Mean over groups of the per-group consistency loss.
pub fn consistency_loss<T: Element>(groups: &[ConsistencyGroup<T>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::contract("no consistency groups"));
    }
    Ok(groups.iter().map(ConsistencyGroup::loss).sum::<f64>() / groups.len() as f64)
}

/// `L_task + lambda * L_consist`.
pub fn total_loss(task: f64, consist: f64, lambda: f64) -> f64 {
    task + lambda * consist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_examples() {
        let g = ConsistencyGroup::<f64>::new(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 2.0, 0.0]).unwrap()).unwrap();
        assert_eq!(g.z_bar(), &[1.0, 0.0]);
        assert_eq!(consistency_loss(&[g]).unwrap(), 1.0);
        let same = ConsistencyGroup::<f64>::new(Tensor::from_f64(&[3, 2], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(same.loss(), 0.0);
        assert!(ConsistencyGroup::<f64>::new(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap()).is_err());
    }

    #[test]
    fn lambda_zero_is_task_loss() {
        assert_eq!(total_loss(1.25, 7.0, 0.0), 1.25);
        assert_eq!(total_loss(1.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn config_ranges() {
        let ok = MiningConfig::default();
        ok.validate().unwrap();
        assert!(MiningConfig { depth_n: 0, ..ok }.validate().is_err());
        assert!(MiningConfig { beta: -1.0, ..ok }.validate().is_err());
        assert!(MiningConfig { batch_size: 7, ..ok }.validate().is_err());
        assert_eq!(Strategy::from_name("random").unwrap(), Strategy::Random);
        assert!(Strategy::from_name("best").is_err());
    }
}
