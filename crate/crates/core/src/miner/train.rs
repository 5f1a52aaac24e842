use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{BatchSampler, LabeledDataset};
use crate::error::{Error, Result};
use crate::miner::{mine_step_with, AnchorSample, MineBatch, MiningConfig, Strategy, TaskObjective};
use crate::models::accuracy;
use crate::models::{Generator, TaskModel};
use crate::numcore::{learning_rate, sgd_step, Element, Graph, ScheduleSpec};
use crate::rain::{sample_latent, style_codes, StyleLatent, StylePosterior};

pub const MINING_LOG_HEADER: [&str; 7] = ["outer_iter", "depth", "strategy", "l_task", "l_consist", "l_m", "lr"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningLogRow {
    pub outer_iter: usize,
    pub depth: usize,
    pub strategy: Strategy,
    pub l_task: f64,
    pub l_consist: f64,
    pub l_m: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningRun {
    pub log: Vec<MiningLogRow>,
    /// Mean of every latent used as the mined style (zero-length for source-only).
    pub eps_mean: Vec<f64>,
    pub eps_count: usize,
    /// Forward evaluations of `L_M`, one per mining step.
    pub forward_evals: usize,
}

/// The anchor style distribution `(psi, xi) = E_vae(E(x_T))`.
pub fn anchor_posterior<T: Element>(gen: &Generator<T>, anchor: &AnchorSample) -> Result<StylePosterior<f64>> {
    gen.require_trained()?;
    let code = style_codes(gen, &anchor.batch::<T>())?.remove(0);
    let p = gen.vae_encode(&code)?;
    StylePosterior::new(
        p.psi.iter().map(|v| v.to_f64().expect("finite")).collect(),
        p.xi.iter().map(|v| v.to_f64().expect("finite")).collect(),
    )
}

fn draw(dist: &StylePosterior<f64>, rng: &mut ChaCha8Rng) -> Result<StyleLatent<f64>> {
    let eta: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(rng)).collect();
    sample_latent(dist, &eta)
}

fn locate(e: Error, outer: usize, depth: usize) -> Error {
    match e {
        Error::Diverged(m) => Error::Diverged(format!("outer iteration {outer}, depth {depth}: {m}")),
        Error::NonFinite(m) => Error::NonFinite(format!("outer iteration {outer}, depth {depth}: {m}")),
        other => other,
    }
}

/// Shared training driver. Every strategy sees the same content batches, the
/// same schedule, and `depth_n` updates of the task model per batch; they
/// differ only in how the style latent evolves within a batch.
pub fn train_strategy<T: Element>(
    model: &mut TaskModel<T>,
    gen: Option<&Generator<T>>,
    source: &LabeledDataset,
    anchor: Option<&AnchorSample>,
    cfg: &MiningConfig,
    strategy: Strategy,
) -> Result<MiningRun> {
    cfg.validate()?;
    source.check_classes(model.cfg.classes)?;
    let schedule = ScheduleSpec::new(cfg.alpha, cfg.warmup_iters, cfg.total_iters, cfg.power)?;
    let mut sampler = BatchSampler::new(source.len(), cfg.contents_per_batch(), cfg.seed)?;
    let mut run = MiningRun {
        log: Vec::with_capacity(cfg.total_iters * cfg.depth_n),
        eps_mean: Vec::new(),
        eps_count: 0,
        forward_evals: 0,
    };

    if strategy == Strategy::SourceOnly {
        for outer in 0..cfg.total_iters {
            let (x, y) = source.gather::<T>(&sampler.next().expect("endless"))?;
            let lr = learning_rate(&schedule, outer)?;
            for depth in 0..cfg.depth_n {
                let mut g = Graph::new();
                let theta = model.params.bind(&mut g, true);
                let xv = g.constant(x.clone());
                let (logits, _) = model.forward_graph(&mut g, &theta, xv)?;
                let loss = g.softmax_cross_entropy(logits, &y)?;
                let l = g.value(loss).item()?.to_f64().expect("finite");
                if !l.is_finite() {
                    return Err(locate(Error::NonFinite(format!("task loss {l}")), outer, depth));
                }
                let mut grads = g.backward(loss)?;
                model.params.collect_grads(&theta, &mut grads)?;
                sgd_step(&mut model.params, lr, cfg.momentum, cfg.weight_decay)?;
                run.forward_evals += 1;
                run.log.push(MiningLogRow {
                    outer_iter: outer,
                    depth,
                    strategy,
                    l_task: l,
                    l_consist: 0.0,
                    l_m: l,
                    lr,
                });
            }
        }
        return Ok(run);
    }

    let gen = gen.ok_or_else(|| Error::contract(format!("strategy `{}` needs a generator", strategy.name())))?;
    let anchor = anchor.ok_or_else(|| Error::contract(format!("strategy `{}` needs the anchor sample", strategy.name())))?;
    let anchor_dist = anchor_posterior(gen, anchor)?;
    let dist = match strategy {
        Strategy::Random => StylePosterior::standard(gen.cfg.latent_dim),
        _ => anchor_dist,
    };
    let mut rng_eps = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_eps.set_stream(1);
    let mut rng_aux = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_aux.set_stream(2);
    let mut eps_sum = vec![0.0; gen.cfg.latent_dim];

    for outer in 0..cfg.total_iters {
        let (x, y) = source.gather::<T>(&sampler.next().expect("endless"))?;
        let batch = MineBatch::new(gen, &x, y)?;
        let lr = learning_rate(&schedule, outer)?;
        let mut eps = draw(&dist, &mut rng_eps)?;
        for depth in 0..cfg.depth_n {
            if depth > 0 && strategy != Strategy::Asm {
                eps = draw(&dist, &mut rng_eps)?;
            }
            for (s, e) in eps_sum.iter_mut().zip(&eps.epsilon) {
                *s += e;
            }
            run.eps_count += 1;
            let aux = (1..cfg.styles_per_content)
                .map(|_| draw(&dist, &mut rng_aux))
                .collect::<Result<Vec<_>>>()?;
            let mut obj = TaskObjective::new(model, gen, &batch, aux, cfg);
            let out = mine_step_with(&mut obj, &eps, lr, cfg.beta).map_err(|e| locate(e, outer, depth))?;
            run.forward_evals += obj.forward_evals;
            run.log.push(MiningLogRow {
                outer_iter: outer,
                depth,
                strategy,
                l_task: out.eval.l_task,
                l_consist: out.eval.l_consist,
                l_m: out.eval.l_m,
                lr,
            });
            if strategy == Strategy::Asm {
                eps = out.eps_next;
            }
        }
    }
    run.eps_mean = eps_sum.iter().map(|s| s / run.eps_count as f64).collect();
    Ok(run)
}

/// Adversarial style mining (the full algorithm).
pub fn train_asm<T: Element>(
    model: &mut TaskModel<T>,
    gen: &Generator<T>,
    source: &LabeledDataset,
    anchor: &AnchorSample,
    cfg: &MiningConfig,
) -> Result<MiningRun> {
    train_strategy(model, Some(gen), source, Some(anchor), cfg, Strategy::Asm)
}

/// Anchored or random re-sampling of the style latent at every depth step.
pub fn baseline_strategy<T: Element>(
    kind: Strategy,
    model: &mut TaskModel<T>,
    gen: &Generator<T>,
    source: &LabeledDataset,
    anchor: &AnchorSample,
    cfg: &MiningConfig,
) -> Result<MiningRun> {
    match kind {
        Strategy::Anchored | Strategy::Random => train_strategy(model, Some(gen), source, Some(anchor), cfg, kind),
        other => Err(Error::contract(format!("`{}` is not a sampling baseline", other.name()))),
    }
}

/// Plain supervised training on unstylized source images.
pub fn source_only<T: Element>(model: &mut TaskModel<T>, source: &LabeledDataset, cfg: &MiningConfig) -> Result<MiningRun> {
    train_strategy(model, None, source, None, cfg, Strategy::SourceOnly)
}

const EVAL_CHUNK: usize = 250;

/// Classification accuracy on a labeled dataset.
pub fn evaluate<T: Element>(model: &TaskModel<T>, ds: &LabeledDataset) -> Result<f64> {
    ds.check_classes(model.cfg.classes)?;
    let mut pred = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len())).collect();
        let (x, _) = ds.gather::<T>(&idx)?;
        pred.extend(model.predict(&x)?);
    }
    accuracy(&pred, ds.labels())
}

/// Penultimate features of every sample, paired with its label.
pub fn embeddings<T: Element>(model: &TaskModel<T>, ds: &LabeledDataset) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len())).collect();
        let (x, y) = ds.gather::<T>(&idx)?;
        let (_, z) = model.forward(&x)?;
        let f = z.shape()[1];
        out.extend(y.into_iter().zip(z.to_f64_vec().chunks(f).map(<[f64]>::to_vec)));
    }
    Ok(out)
}
