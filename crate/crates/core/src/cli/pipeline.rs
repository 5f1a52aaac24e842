//! The stages every subcommand is built from.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{
    apply_shift, decode_idx, encode_idx, gen_style_corpus, load_idx, render_digits, split_target, BatchSampler,
    LabeledDataset, Split, DIGIT_SIDE,
};
use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::miner::{evaluate, train_strategy, AnchorSample, MiningRun, Strategy};
use crate::models::{accuracy, Generator, SourceClassifier, TaskModel};
use crate::numcore::{learning_rate, sgd_step, Graph, ParamSet, ScheduleSpec};
use crate::rain::{train_rain, RainLogRow, RainOptions};

/// Source train/validation sets, the anchor, and the held-out target set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: LabeledDataset,
    pub val: LabeledDataset,
    pub anchor: AnchorSample,
    pub heldout: LabeledDataset,
}

impl Prepared {
    /// SHA-256 over every image and label, identifying the data split.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for ds in [&self.source, &self.val, &self.heldout] {
            for v in ds.images().data() {
                h.update(v.to_le_bytes());
            }
            for &l in ds.labels() {
                h.update((l as u32).to_le_bytes());
            }
        }
        for v in self.anchor.image().data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn digits(n: usize, seed: u64, side: usize) -> Result<LabeledDataset> {
    let (pixels, labels) = render_digits(n, seed);
    let (img, lbl) = encode_idx(&pixels, DIGIT_SIDE, DIGIT_SIDE, &labels)?;
    decode_idx(&img, &lbl, side)
}

fn pool(cfg: &RunConfig, images: &str, labels: &str, n: usize, seed: u64) -> Result<LabeledDataset> {
    let ds = if images.is_empty() {
        digits(n, seed, cfg.net.side)?
    } else {
        for (key, p) in [("images", images), ("labels", labels)] {
            if !Path::new(p).is_file() {
                return Err(Error::config(key, format!("no such file: {p}")));
            }
        }
        load_idx(Path::new(images), Path::new(labels), cfg.net.side)?
    };
    if ds.len() < n {
        return Err(Error::config("source_count", format!("{images} holds {} samples, need {n}", ds.len())));
    }
    ds.check_classes(cfg.net.classes)?;
    Ok(ds)
}

/// Builds (or loads) every dataset of a run from the config alone.
pub fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let n_src = cfg.source_count + cfg.val_count;
    let src = pool(cfg, &cfg.source_images, &cfg.source_labels, n_src, cfg.data_seed)?;
    let source = src.range(0, cfg.source_count, Split::Train)?;
    let val = src.range(cfg.source_count, cfg.val_count, Split::Heldout)?;
    let tgt = pool(
        cfg,
        &cfg.target_images,
        &cfg.target_labels,
        cfg.target_count,
        cfg.data_seed.wrapping_add(1_000_003),
    )?;
    let tgt = tgt.range(0, cfg.target_count, Split::Heldout)?;
    let shifted = apply_shift(&tgt, &cfg.shift)?;
    let (anchor, heldout) = split_target(&shifted, cfg.data_seed)?;
    Ok(Prepared {
        source,
        val,
        anchor,
        heldout,
    })
}

/// Output of encoder pretraining.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub classifier: SourceClassifier<f32>,
    /// Decoder trained alongside as a reconstruction head; warm-starts RAIN.
    pub decoder: ParamSet<f32>,
    pub val_accuracy: f64,
}

/// Trains the source classifier whose trunk becomes the frozen encoder,
/// jointly with a reconstruction decoder on source digits and style-corpus
/// textures so that the trunk's features stay invertible.
pub fn pretrain_encoder(cfg: &RunConfig, data: &Prepared) -> Result<Pretrained> {
    let mut cls = SourceClassifier::<f32>::new(cfg.net, cfg.seed)?;
    let mut gen = Generator::<f32>::new(cfg.net, cfg.seed)?;
    let corpus = gen_style_corpus(cfg.corpus_size, cfg.seed.wrapping_add(77), cfg.net.side)?;
    let schedule = ScheduleSpec::new(cfg.pretrain_lr, cfg.pretrain_iters / 20, cfg.pretrain_iters, 0.9)?;
    let mut batches = BatchSampler::new(data.source.len(), cfg.pretrain_batch, cfg.seed)?;
    let mut styles = BatchSampler::new(corpus.shape()[0], cfg.pretrain_batch.min(corpus.shape()[0]), cfg.seed)?;
    for iter in 0..cfg.pretrain_iters {
        let (x, y) = data.source.gather::<f32>(&batches.next().expect("endless"))?;
        let xs = corpus.select_rows(&styles.next().expect("endless"))?;
        let b = x.shape()[0];
        let both = crate::numcore::Tensor::concat_rows(&[&x, &xs])?;
        let mut g = Graph::new();
        let enc = cls.encoder.bind(&mut g, true);
        let head = cls.head.bind(&mut g, true);
        let dec = gen.decoder.bind(&mut g, true);
        let xv = g.constant(both.clone());
        let f = *crate::models::encoder_forward(&cls.cfg, &mut g, &enc, xv)?.last().expect("four stages");
        let f_src = g.gather_rows(f, &(0..b).collect::<Vec<_>>())?;
        let logits = cls.head_graph(&mut g, &head, f_src)?;
        let ce = g.softmax_cross_entropy(logits, &y)?;
        let recon = crate::models::decoder_forward(&cls.cfg, &mut g, &dec, f)?;
        let target = g.constant(both);
        let rec = g.mse(recon, target)?;
        let rec = g.scale(rec, 10.0);
        let loss = g.add(ce, rec)?;
        if !g.value(loss).is_finite() {
            return Err(Error::NonFinite(format!("encoder pretraining loss at iteration {iter}")));
        }
        let mut grads = g.backward(loss)?;
        cls.encoder.collect_grads(&enc, &mut grads)?;
        cls.head.collect_grads(&head, &mut grads)?;
        gen.decoder.collect_grads(&dec, &mut grads)?;
        let lr = learning_rate(&schedule, iter)?;
        sgd_step(&mut cls.encoder, lr, 0.9, 5e-4)?;
        sgd_step(&mut cls.head, lr, 0.9, 5e-4)?;
        sgd_step(&mut gen.decoder, lr, 0.9, 5e-4)?;
    }
    let mut pred = Vec::with_capacity(data.val.len());
    for chunk in (0..data.val.len()).collect::<Vec<_>>().chunks(250) {
        let (x, _) = data.val.gather::<f32>(chunk)?;
        pred.extend(cls.predict(&x)?);
    }
    let val_accuracy = accuracy(&pred, data.val.labels())?;
    Ok(Pretrained {
        classifier: cls,
        decoder: gen.decoder,
        val_accuracy,
    })
}

/// Trains decoder and style VAE on top of a frozen encoder.
pub fn train_generator(
    cfg: &RunConfig,
    encoder: ParamSet<f32>,
    decoder: ParamSet<f32>,
    data: &Prepared,
) -> Result<(Generator<f32>, Vec<RainLogRow>)> {
    let fresh = Generator::<f32>::new(cfg.net, cfg.seed)?;
    let mut gen = Generator::from_parts(cfg.net, [encoder, decoder, fresh.vae_enc, fresh.vae_dec], false)?;
    let corpus = gen_style_corpus(cfg.corpus_size, cfg.seed.wrapping_add(77), cfg.net.side)?;
    let opts = RainOptions {
        weights: cfg.weights,
        schedule: ScheduleSpec::new(cfg.rain_lr, cfg.rain_warmup, cfg.rain_iters, cfg.rain_power)?,
        batch_size: cfg.rain_batch,
        momentum: cfg.rain_momentum,
        weight_decay: cfg.rain_weight_decay,
        seed: cfg.seed,
        bypass_vae: false,
    };
    let log = train_rain(&mut gen, data.source.images(), &corpus, &opts)?;
    Ok((gen, log))
}

/// Result of one strategy run on one seed.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub model: TaskModel<f32>,
    pub run: MiningRun,
    pub target_accuracy: f64,
}

/// Trains a fresh task model (initialized from `seed`) with `strategy` and
/// evaluates it on the held-out target set.
pub fn run_strategy(
    cfg: &RunConfig,
    gen: Option<&Generator<f32>>,
    data: &Prepared,
    strategy: Strategy,
    seed: u64,
) -> Result<StrategyRun> {
    let mut model = TaskModel::<f32>::new(cfg.net, seed)?;
    let mining = cfg.mining_for(seed);
    let run = train_strategy(&mut model, gen, &data.source, Some(&data.anchor), &mining, strategy)?;
    let target_accuracy = evaluate(&model, &data.heldout)?;
    Ok(StrategyRun {
        model,
        run,
        target_accuracy,
    })
}
