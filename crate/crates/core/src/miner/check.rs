use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::miner::{mining_loss_graph, GroupMode};
use crate::models::{Generator, NetConfig, TaskModel};
use crate::numcore::gradcheck::{check_instance, uniform, CheckOutcome, Instance};
use crate::numcore::Graph;

/// Small networks for the composed check: every layer is exercised but a
/// full central-difference sweep stays cheap.
pub fn check_net() -> NetConfig {
    NetConfig {
        side: 8,
        channels: 4,
        latent_dim: 3,
        classes: 3,
        feat_dim: 6,
        vae_hidden: 5,
        task_channels: 2,
    }
}

/// Finite-difference check of the gradient of `L_M` with respect to the
/// style latents, through the VAE decoder, AdaIN, the image decoder and the
/// task model. Generator and task model are freshly initialized per trial.
pub fn check_mining_gradient(trials: usize, seed: u64) -> Result<CheckOutcome> {
    let cfg = check_net();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let gen = Generator::<f64>::new(cfg, rng.gen())?;
        let model = TaskModel::<f64>::new(cfg, rng.gen())?;
        let contents = 2;
        let fs = cfg.feature_side();
        let features = uniform(&mut rng, &[contents, cfg.channels, fs, fs], 0.0, 2.0);
        let labels: Vec<usize> = (0..contents).map(|_| rng.gen_range(0..cfg.classes)).collect();
        let eps = uniform(&mut rng, &[2, cfg.latent_dim], -1.5, 1.5);
        let lambda = rng.gen_range(0.0..1.0);
        let groups = if t % 2 == 0 { GroupMode::PerContent } else { GroupMode::WholeBatch };
        let images = uniform(&mut rng, &[contents, 3, cfg.side, cfg.side], 0.0, 1.0);
        let with_source = t % 4 < 2;
        let build = |g: &mut Graph<f64>, v: &[crate::numcore::Var], y: &[usize]| {
            let vars = gen.bind(g, false);
            let theta = model.params.bind(g, false);
            let source = with_source.then_some(v[2]);
            let loss = mining_loss_graph(&gen, &model, g, &vars, &theta, v[0], v[1], source, y, lambda, groups)?;
            Ok(loss.l_m)
        };
        let inst = Instance {
            inputs: vec![features, eps, images],
            labels,
        };
        worst = worst.max(check_instance(&build, &inst, None, &[0, 2], seed ^ t as u64)?);
    }
    Ok(CheckOutcome {
        name: "mining_grad_eps".into(),
        instances: trials,
        max_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composed_latent_gradient_matches_differences() {
        let out = check_mining_gradient(4, 3).unwrap();
        assert!(out.passed(), "rel err {}", out.max_rel_err);
    }
}
