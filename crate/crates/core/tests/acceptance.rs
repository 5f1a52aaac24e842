//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits nonzero if any fails.
//!
//! The desk-scale pipeline (encoder pretraining, RAIN, four strategies over
//! five seeds) dominates the runtime; the rest takes seconds.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asm_core::cli::pipeline::{prepare_data, pretrain_encoder, train_generator, Prepared};
use asm_core::cli::{StrategyReport, MARGIN_ANCHORED, MARGIN_SOURCE_ONLY};
use asm_core::data::decode_idx;
use asm_core::io::{decode_checkpoint, encode_checkpoint, RunConfig};
use asm_core::miner::{
    anchor_posterior, check_mining_gradient, consistency_loss, mine_step, train_strategy, ConsistencyGroup, MineBatch,
    Strategy,
};
use asm_core::models::{Generator, TaskModel};
use asm_core::numcore::gradcheck::check_primitives;
use asm_core::numcore::{channel_stats, learning_rate, ChannelStats, Graph, ScheduleSpec, Tensor};
use asm_core::rain::{adain, kl_loss, rec_loss, sample_latent, StyleCode, StyleLatent, StylePosterior};
use asm_core::Error;

type Verdict = Result<(bool, String), Error>;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let mut outcomes = check_primitives(50, 11)?;
    outcomes.push(check_mining_gradient(50, 11)?);
    let secs = t.elapsed().as_secs_f64();
    let worst = outcomes.iter().fold(0.0f64, |m, o| m.max(o.max_rel_err));
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    Ok((
        failed.is_empty() && secs <= 60.0,
        format!(
            "{} checks x 50 instances, worst rel err {worst:.2e} (tol 1e-4), {secs:.1}s (budget 60s), failing: {failed:?}",
            outcomes.len()
        ),
    ))
}

fn closed_forms() -> Verdict {
    let tol = 1e-9;
    let mut bad = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !close(got, want, tol) {
            bad.push(format!("{name}: {got} vs {want}"));
        }
    };
    check("kl(0,1)", kl_loss(&StylePosterior::new(vec![0.0], vec![1.0])?)?, 0.0);
    check("kl(1,1)", kl_loss(&StylePosterior::new(vec![1.0], vec![1.0])?)?, 0.5);
    check(
        "kl(1,1) x3 dims",
        kl_loss(&StylePosterior::new(vec![1.0; 3], vec![1.0; 3])?)?,
        1.5,
    );
    check(
        "kl(0,2)",
        kl_loss(&StylePosterior::new(vec![0.0], vec![2.0])?)?,
        0.5 * (4.0 - 1.0 - 2.0 * 2f64.ln()),
    );
    let zero = StyleCode(vec![0.0f64, 0.0]);
    let hat = StyleCode(vec![3.0f64, 4.0]);
    check("rec(0,(3,4))", rec_loss(&zero, &hat)?, 5.0);
    check("rec((3,4),0)", rec_loss(&hat, &zero)?, 5.0);
    check("rec(a,a)", rec_loss(&hat, &hat)?, 0.0);

    let pair = ConsistencyGroup::<f64>::new(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 2.0, 0.0])?)?;
    check("consistency {(0,0),(2,0)}", consistency_loss(&[pair])?, 1.0);
    let same = ConsistencyGroup::<f64>::new(Tensor::from_f64(&[3, 2], &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0])?)?;
    check("consistency identical", consistency_loss(&[same])?, 0.0);

    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::zeros(&[4, 10]));
    let ce = g.softmax_cross_entropy(logits, &[0, 3, 7, 9])?;
    check("task loss uniform K=10", g.value(ce).item()?, 10f64.ln());

    let s = ScheduleSpec::new(2.5e-4, 5000, 100_000, 0.9)?;
    check("lr iter 0", learning_rate(&s, 0)?, 0.0);
    check("lr end of warm-up", learning_rate(&s, 5000)?, 2.5e-4);
    check("lr midpoint", learning_rate(&s, 50_000)?, 2.5e-4 * 0.5f64.powf(0.9));
    let mid = learning_rate(&s, 50_000)?;
    let literal_ok = close(mid, 1.3397e-4, 5e-9);
    let ok = bad.is_empty() && literal_ok;
    Ok((ok, format!("15 fixtures at 1e-9, lr midpoint {mid:.6e}; mismatches: {bad:?}")))
}

fn adain_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.gen_range(1..6);
        let hw = rng.gen_range(2..30);
        let scale: Vec<f64> = (0..c).map(|_| 10f64.powf(rng.gen_range(-3.5..1.0))).collect();
        let data: Vec<f64> = (0..c * hw)
            .map(|i| rng.gen_range(-5.0..5.0) + scale[i / hw] * rng.gen_range(-1.0..1.0))
            .collect();
        let f = Tensor::new(&[1, c, 1, hw], data)?;
        if channel_stats(&f)?[0].sigma.iter().any(|&s| s < 1e-4) {
            continue;
        }
        let target = ChannelStats::new(
            (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            (0..c).map(|_| rng.gen_range(0.01..3.0)).collect(),
        )?;
        let out = channel_stats(&adain(&f, std::slice::from_ref(&target))?)?.remove(0);
        for k in 0..c {
            worst = worst
                .max((out.mu[k] - target.mu[k]).abs())
                .max((out.sigma[k] - target.sigma[k]).abs());
        }
    }
    Ok((worst <= 1e-5, format!("1000 cases, worst |stat - target| {worst:.2e} (tol 1e-5)")))
}

/// L_M along `depth` ascent steps with the task model frozen (lr = 0); the
/// companion latents stay fixed so only the mined latent moves.
fn ascent_trial(gen: &Generator<f64>, model: &mut TaskModel<f64>, data: &Prepared, seed: u64) -> Result<bool, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..8).map(|_| rng.gen_range(0..data.source.len())).collect();
    let (x, y) = data.source.gather::<f64>(&idx)?;
    let batch = MineBatch::new(gen, &x, y)?;
    let post = anchor_posterior(gen, &data.anchor)?;
    let draw = |rng: &mut ChaCha8Rng| {
        let eta: Vec<f64> = (0..post.dim()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        sample_latent(&post, &eta)
    };
    let mut eps: StyleLatent<f64> = draw(&mut rng)?;
    let aux = vec![draw(&mut rng)?];
    let cfg = asm_core::miner::MiningConfig {
        beta: 1e-3,
        ..RunConfig::default().mining
    };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..5 {
        let out = mine_step(model, gen, &batch, &eps, aux.clone(), 0.0, &cfg)?;
        if out.eval.l_m < prev - 1e-6 {
            return Ok(false);
        }
        prev = out.eval.l_m;
        eps = out.eps_next;
    }
    Ok(true)
}

fn mining_ascent(gen: &Generator<f32>, data: &Prepared) -> Verdict {
    let gen = gen.cast::<f64>();
    let cfg = RunConfig::default();
    let mut ok = 0;
    for trial in 0..100u64 {
        let mut model = TaskModel::<f64>::new(cfg.net, 1000 + trial)?;
        ok += usize::from(ascent_trial(&gen, &mut model, data, trial)?);
    }
    Ok((ok >= 90, format!("{ok}/100 trials non-decreasing over 5 depth steps (need >= 90)")))
}

fn degenerate_equivalence(gen: &Generator<f32>, data: &Prepared) -> Verdict {
    let base = RunConfig::default();
    let cfg = asm_core::miner::MiningConfig {
        beta: 0.0,
        depth_n: 1,
        total_iters: 40,
        ..base.mining_for(5)
    };
    let run = |s: Strategy| -> Result<Vec<[u64; 6]>, Error> {
        let mut model = TaskModel::<f32>::new(base.net, 5)?;
        let r = train_strategy(&mut model, Some(gen), &data.source, Some(&data.anchor), &cfg, s)?;
        Ok(r.log
            .iter()
            .map(|l| {
                [
                    l.outer_iter as u64,
                    l.depth as u64,
                    l.l_task.to_bits(),
                    l.l_consist.to_bits(),
                    l.l_m.to_bits(),
                    l.lr.to_bits(),
                ]
            })
            .collect())
    };
    let (a, b) = (run(Strategy::Asm)?, run(Strategy::Anchored)?);
    Ok((a == b && !a.is_empty(), format!("{} log rows, bit-identical: {}", a.len(), a == b)))
}

fn ordering(cfg: &RunConfig, gen: &Generator<f32>, data: &Prepared) -> Verdict {
    let t = Instant::now();
    let report = StrategyReport::run(cfg, gen, data)?;
    let secs = t.elapsed().as_secs_f64();
    print!("{}", report.summary());
    let (asm, anc, src) = (
        report.median_of(Strategy::Asm),
        report.median_of(Strategy::Anchored),
        report.median_of(Strategy::SourceOnly),
    );
    Ok((
        report.passed(),
        format!(
            "median asm {asm:.4}, anchored {anc:.4} (need asm >= +{MARGIN_ANCHORED}), source_only {src:.4} \
             (need asm >= +{MARGIN_SOURCE_ONLY}); strategies ran in {secs:.0}s"
        ),
    ))
}

fn rain_convergence(log: &[asm_core::rain::RainLogRow]) -> Verdict {
    if log.len() < 2000 {
        return Ok((false, format!("only {} iterations logged", log.len())));
    }
    let (early, late) = (log[99].total, log[1999].total);
    Ok((
        late <= 0.5 * early,
        format!("L_RAIN iteration 100: {early:.4}, iteration 2000: {late:.4}, ratio {:.3} (need <= 0.5)", late / early),
    ))
}

fn run_cli(args: &[&str]) -> Result<(), Error> {
    let code = asm_core::cli::run(std::iter::once("asm").chain(args.iter().copied()));
    if code == 0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("`asm {}` exited with {code}", args.join(" "))))
    }
}

fn persistence(model: &TaskModel<f32>) -> Verdict {
    let bytes = encode_checkpoint(&model.params);
    let back = decode_checkpoint::<f32>(&bytes)?;
    let round_trip = back == model.params && encode_checkpoint(&back) == bytes;

    let tmp = tempfile::tempdir().map_err(|e| Error::Contract(e.to_string()))?;
    let small = [
        "--source_count=200",
        "--val_count=50",
        "--target_count=51",
        "--pretrain_iters=40",
        "--rain_iters=40",
        "--rain_warmup=4",
        "--total_iters=6",
    ];
    let mut outputs = Vec::new();
    for rep in 0..2 {
        let dir = tmp.path().join(format!("run{rep}"));
        let out = format!("--out_dir={}", dir.display());
        for sub in [
            &["pretrain-encoder"][..],
            &["train-rain"],
            &["train-asm", "--strategy", "asm"],
            &["train-asm", "--strategy", "source_only"],
        ] {
            let mut args: Vec<&str> = sub.to_vec();
            args.extend(small);
            args.push(&out);
            run_cli(&args)?;
        }
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for name in [
            "rain_loss.csv",
            "mining_asm.csv",
            "mining_source_only.csv",
            "embeddings_asm.csv",
            "generator.ckpt",
            "task_asm.ckpt",
        ] {
            files.push((name.into(), read(&dir.join(name))?));
        }
        outputs.push(files);
    }
    let identical = outputs[0] == outputs[1];
    Ok((
        round_trip && identical,
        format!(
            "checkpoint round-trip bit-exact: {round_trip}; {} CSV/checkpoint outputs identical across re-runs: {identical}",
            outputs[0].len()
        ),
    ))
}

fn read(p: &Path) -> Result<Vec<u8>, Error> {
    fs::read(p).map_err(|e| Error::Contract(format!("{}: {e}", p.display())))
}

fn idx_fixture() -> Verdict {
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
    let pixels: [[u8; 4]; 4] = [[0, 255, 128, 1], [10, 20, 30, 40], [255, 255, 0, 0], [7, 0, 0, 250]];
    for p in pixels {
        img.extend(p);
    }
    let lbl = vec![0, 0, 8, 1, 0, 0, 0, 4, 3, 1, 4, 1];
    let ds = decode_idx(&img, &lbl, 2)?;
    let mut exact = ds.labels() == [3, 1, 4, 1];
    for (i, p) in pixels.iter().enumerate() {
        for ch in 0..3 {
            for (k, &v) in p.iter().enumerate() {
                exact &= ds.images().data()[i * 12 + ch * 4 + k] == v as f32 / 255.0;
            }
        }
    }
    let mut bad_magic = img.clone();
    bad_magic[3] = 9;
    let magic = matches!(decode_idx(&bad_magic, &lbl, 2), Err(Error::Format { .. }));
    let truncated = matches!(decode_idx(&img[..img.len() - 1], &lbl, 2), Err(Error::Format { .. }));
    let short_labels = matches!(decode_idx(&img, &lbl[..10], 2), Err(Error::Format { .. }));
    Ok((
        exact && magic && truncated && short_labels,
        format!("exact pixels: {exact}; bad magic rejected: {magic}; truncation rejected: {truncated}/{short_labels}"),
    ))
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |id: usize, name: &'static str, v: Verdict| {
        match &v {
            Ok((pass, detail)) => println!("criterion {id} {name}: {} ({detail})", if *pass { "PASS" } else { "FAIL" }),
            Err(e) => println!("criterion {id} {name}: FAIL (error: {e})"),
        }
        results.push((id, name, v));
    };

    report(1, "gradient oracle", gradient_oracle());
    report(2, "closed-form losses", closed_forms());
    report(3, "AdaIN exactness", adain_exactness());
    report(9, "IDX ingestion", idx_fixture());

    let cfg = RunConfig::default();
    let t = Instant::now();
    let pipeline = (|| -> Result<_, Error> {
        let data = prepare_data(&cfg)?;
        let pre = pretrain_encoder(&cfg, &data)?;
        let (gen, log) = train_generator(&cfg, pre.classifier.encoder, pre.decoder, &data)?;
        Ok((data, gen, log))
    })();
    println!("desk pipeline trained in {:.0}s", t.elapsed().as_secs_f64());
    match pipeline {
        Ok((data, gen, log)) => {
            report(7, "RAIN convergence", rain_convergence(&log));
            report(4, "mining ascent", mining_ascent(&gen, &data));
            report(5, "degenerate equivalence", degenerate_equivalence(&gen, &data));
            let model = TaskModel::<f32>::new(cfg.net, 0).expect("valid config");
            report(8, "persistence and determinism", persistence(&model));
            report(6, "desk ordering experiment", ordering(&cfg, &gen, &data));
        }
        Err(e) => {
            for (id, name) in [(7, "RAIN convergence"), (4, "mining ascent"), (5, "degenerate equivalence"), (6, "desk ordering experiment")] {
                report(id, name, Err(Error::Contract(format!("pipeline failed: {e}"))));
            }
            let model = TaskModel::<f32>::new(cfg.net, 0).expect("valid config");
            report(8, "persistence and determinism", persistence(&model));
        }
    }

    results.sort_by_key(|r| r.0);
    println!("\nsummary");
    let mut failed = 0;
    for (id, name, v) in &results {
        let pass = matches!(v, Ok((true, _)));
        failed += usize::from(!pass);
        println!("  {id}. {name:<28} {}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
