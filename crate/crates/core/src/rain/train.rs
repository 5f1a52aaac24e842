use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::numcore::{learning_rate, lit, sgd_step, Element, Graph, ScheduleSpec, Tensor};
use crate::rain::{content_loss, sample_latent_graph, split_code, stage_stats, style_loss, RainWeights};

pub const RAIN_LOG_HEADER: [&str; 6] = ["iter", "l_c", "l_s", "l_kl", "l_rec", "total"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainOptions {
    pub weights: RainWeights,
    pub schedule: ScheduleSpec,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Feed the style code straight into AdaIN, skipping (and not training)
    /// the style VAE.
    pub bypass_vae: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainLogRow {
    pub iter: usize,
    pub l_c: f64,
    pub l_s: f64,
    pub l_kl: f64,
    pub l_rec: f64,
    pub total: f64,
}

impl RainLogRow {
    pub fn values(&self) -> [f64; 6] {
        [self.iter as f64, self.l_c, self.l_s, self.l_kl, self.l_rec, self.total]
    }
}

fn scalar<T: Element>(g: &Graph<T>, v: crate::numcore::Var) -> Result<f64> {
    Ok(g.value(v).item()?.to_f64().expect("finite"))
}

/// Trains decoder and style VAE jointly on
/// `L_c + lambda_s L_s + lambda_k L_kl + lambda_r L_rec`, with the encoder frozen.
/// Runs `schedule.max_iters` iterations and returns one log row per iteration.
pub fn train_rain<T: Element>(
    gen: &mut Generator<T>,
    content: &Tensor<f32>,
    corpus: &Tensor<f32>,
    opts: &RainOptions,
) -> Result<Vec<RainLogRow>> {
    opts.weights.validate()?;
    let (nc, ns) = (content.shape()[0], corpus.shape()[0]);
    if ns == 0 {
        return Err(Error::contract("style corpus is empty"));
    }
    let mut contents = BatchSampler::new(nc, opts.batch_size, opts.seed)?;
    let mut styles = BatchSampler::new(ns, opts.batch_size, opts.seed.wrapping_add(1))?;
    let mut noise = ChaCha8Rng::seed_from_u64(opts.seed);
    noise.set_stream(7);
    let (c, d) = (gen.cfg.channels, gen.cfg.latent_dim);
    let w = opts.weights;
    let mut log = Vec::with_capacity(opts.schedule.max_iters);

    for iter in 0..opts.schedule.max_iters {
        let xc: Tensor<T> = content.select_rows(&contents.next().expect("endless"))?.cast();
        let xs: Tensor<T> = corpus.select_rows(&styles.next().expect("endless"))?.cast();
        let b = opts.batch_size;

        let mut g = Graph::new();
        let vars = gen.bind(&mut g, true);
        let xcv = g.constant(xc);
        let xsv = g.constant(xs);
        let f_c = *gen.encoder_stages(&mut g, &vars, xcv)?.last().expect("four stages");
        let s_stages = gen.encoder_stages(&mut g, &vars, xsv)?;
        let s_stats = stage_stats(&mut g, &s_stages)?;
        let (mu_s, sd_s) = *s_stats.last().expect("four stages");
        let code = g.concat_cols(&[mu_s, sd_s])?;

        let (mu_t, sd_t, kl, rec) = if opts.bypass_vae {
            (mu_s, sd_s, None, None)
        } else {
            let (psi, xi) = gen.vae_encode_graph(&mut g, &vars, code)?;
            let eta: Vec<T> = (0..b * d)
                .map(|_| lit::<T>(StandardNormal.sample(&mut noise)))
                .collect();
            let eta = g.constant(Tensor::new(&[b, d], eta)?);
            let eps = sample_latent_graph(&mut g, psi, xi, eta)?;
            let code_hat = gen.vae_decode_graph(&mut g, &vars, eps)?;
            let kl = g.kl_std_normal(psi, xi)?;
            let diff = g.sub(code, code_hat)?;
            let rec = g.row_norm(diff)?;
            let rec = g.mean(rec);
            let (mu, sd) = split_code(&mut g, code_hat, c)?;
            (mu, sd, Some(kl), Some(rec))
        };

        let t = g.adain(f_c, mu_t, sd_t)?;
        let out = gen.decode_graph(&mut g, &vars, t)?;
        let o_stages = gen.encoder_stages(&mut g, &vars, out)?;
        let l_c = content_loss(&mut g, *o_stages.last().expect("four stages"), t)?;
        let l_s = style_loss(&mut g, &o_stages, &s_stats)?;
        let mut total = g.scale(l_s, lit(w.lambda_s));
        total = g.add(l_c, total)?;
        for (term, weight) in [(kl, w.lambda_k), (rec, w.lambda_r)] {
            if let Some(v) = term {
                let v = g.scale(v, lit(weight));
                total = g.add(total, v)?;
            }
        }

        let row = RainLogRow {
            iter,
            l_c: scalar(&g, l_c)?,
            l_s: scalar(&g, l_s)?,
            l_kl: kl.map(|v| scalar(&g, v)).transpose()?.unwrap_or(0.0),
            l_rec: rec.map(|v| scalar(&g, v)).transpose()?.unwrap_or(0.0),
            total: scalar(&g, total)?,
        };
        if !row.total.is_finite() {
            return Err(Error::NonFinite(format!("RAIN loss at iteration {iter}")));
        }
        log.push(row);

        let mut grads = g.backward(total)?;
        let lr = learning_rate(&opts.schedule, iter)?;
        gen.decoder.collect_grads(&vars.dec, &mut grads)?;
        sgd_step(&mut gen.decoder, lr, opts.momentum, opts.weight_decay)?;
        if !opts.bypass_vae {
            gen.vae_enc.collect_grads(&vars.vae_enc, &mut grads)?;
            gen.vae_dec.collect_grads(&vars.vae_dec, &mut grads)?;
            sgd_step(&mut gen.vae_enc, lr, opts.momentum, opts.weight_decay)?;
            sgd_step(&mut gen.vae_dec, lr, opts.momentum, opts.weight_decay)?;
        }
    }
    gen.mark_trained();
    Ok(log)
}
