//! The `asm` command line: one subcommand per pipeline stage plus the
//! strategy comparison and the gradient checker.
//!
//! Every config key is also a `--key <value>` flag; flags override the
//! `--config` file, which overrides the defaults.

pub mod pipeline;
mod report;

pub use report::{median, StrategyReport, StrategyResult, MARGIN_ANCHORED, MARGIN_SOURCE_ONLY, REPORT_HEADER};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::data::{render_digits, write_idx, DIGIT_SIDE};
use crate::error::{Error, Result};
use crate::io::{
    load_checkpoint, load_config, merge_prefixed, save_checkpoint, take_prefixed, write_metrics, write_ppm, Field,
    RunConfig,
};
use crate::miner::{anchor_posterior, check_mining_gradient, embeddings, evaluate, Strategy, MINING_LOG_HEADER};
use crate::models::{Generator, TaskModel};
use crate::numcore::gradcheck::check_primitives;
use crate::numcore::{inject_fault, OpKind, Tensor};
use crate::rain::{stylize, tile, StyleLatent, RAIN_LOG_HEADER};
use pipeline::{prepare_data, pretrain_encoder, run_strategy, train_generator, Prepared};

/// Exit code for a failed strategy-ordering verdict.
pub const VERDICT_FAILED: i32 = 3;

fn command() -> Command {
    let mut cmd = Command::new("asm")
        .about("Adversarial style mining for one-shot domain adaptation")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("JSON config file"),
        );
    for key in RunConfig::all_keys() {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .global(true)
                .value_name("VALUE")
                .hide(true)
                .help(format!("override config key `{key}`")),
        );
    }
    cmd.subcommand(
        Command::new("gen-digits")
            .about("Render synthetic handwritten digits as an IDX pair")
            .arg(Arg::new("count").long("count").default_value("2500"))
            .arg(Arg::new("images").long("images").required(true))
            .arg(Arg::new("labels").long("labels").required(true)),
    )
    .subcommand(Command::new("pretrain-encoder").about("Train the source classifier whose trunk becomes the encoder"))
    .subcommand(
        Command::new("train-rain")
            .about("Train decoder and style VAE; writes the generator, loss CSV and previews")
            .arg(Arg::new("encoder").long("encoder").help("pretrained checkpoint (default <out_dir>/encoder.ckpt)")),
    )
    .subcommand(
        Command::new("train-asm")
            .about("Train a task model with one style strategy")
            .arg(
                Arg::new("strategy")
                    .long("strategy")
                    .default_value("asm")
                    .value_parser(Strategy::ALL.map(|s| s.name())),
            )
            .arg(Arg::new("generator").long("generator").help("default <out_dir>/generator.ckpt")),
    )
    .subcommand(
        Command::new("eval")
            .about("Accuracy of a task-model checkpoint")
            .arg(Arg::new("checkpoint").long("checkpoint").required(true))
            .arg(
                Arg::new("split")
                    .long("split")
                    .default_value("target")
                    .value_parser(["target", "val", "source"]),
            ),
    )
    .subcommand(
        Command::new("compare-strategies")
            .about("Run every strategy over `seeds` seeds and test the ordering")
            .arg(Arg::new("generator").long("generator").help("default: train one in-process")),
    )
    .subcommand(
        Command::new("gradcheck")
            .about("Finite-difference check of every gradient rule and the composed latent gradient")
            .arg(Arg::new("trials").long("trials").default_value("50"))
            .arg(
                Arg::new("inject-fault")
                    .long("inject-fault")
                    .value_name("OP")
                    .help("deliberately break one backward rule"),
            ),
    )
    .subcommand(Command::new("show-config").about("Print the effective config as JSON"))
}

fn config_from(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => load_config(Path::new(p))?,
        None => RunConfig::default(),
    };
    for key in RunConfig::all_keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set_str(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(m: &ArgMatches, name: &str) -> Result<T> {
    let raw = m.get_one::<String>(name).expect("has default");
    raw.parse()
        .map_err(|_| Error::config(name, format!("expected a non-negative integer, got {raw}")))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn path_or(m: &ArgMatches, name: &str, dir: &Path, default: &str) -> PathBuf {
    m.get_one::<String>(name).map_or_else(|| dir.join(default), PathBuf::from)
}

/// Writes a fresh CSV, replacing any earlier file so re-runs are identical.
fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Field>]) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::io(path, e)),
    }
    write_metrics(path, header, rows)
}

fn load_generator(cfg: &RunConfig, path: &Path) -> Result<Generator<f32>> {
    let all = load_checkpoint::<f32>(path)?;
    let parts = ["enc", "dec", "vae_enc", "vae_dec"].map(|p| take_prefixed(&all, p));
    let [a, b, c, d] = parts;
    Generator::from_parts(cfg.net, [a?, b?, c?, d?], true)
}

fn save_generator(path: &Path, gen: &Generator<f32>) -> Result<()> {
    let [e, d, ve, vd] = gen.parts();
    let all = merge_prefixed(&[("enc", e.1), ("dec", d.1), ("vae_enc", ve.1), ("vae_dec", vd.1)])?;
    save_checkpoint(path, &all)
}

fn gen_digits(m: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let count: usize = parse_num(m, "count")?;
    let (pixels, labels) = render_digits(count, cfg.data_seed);
    let images = PathBuf::from(m.get_one::<String>("images").expect("required"));
    let label_path = PathBuf::from(m.get_one::<String>("labels").expect("required"));
    write_idx(&images, &label_path, &pixels, DIGIT_SIDE, DIGIT_SIDE, &labels)?;
    println!("wrote {count} digits to {}", images.display());
    Ok(())
}

fn pretrain(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = prepare_data(cfg)?;
    let pre = pretrain_encoder(cfg, &data)?;
    let all = merge_prefixed(&[
        ("enc", &pre.classifier.encoder),
        ("cls", &pre.classifier.head),
        ("dec", &pre.decoder),
    ])?;
    let path = dir.join("encoder.ckpt");
    save_checkpoint(&path, &all)?;
    println!("data {}", data.digest());
    println!("source validation accuracy {:.4}", pre.val_accuracy);
    println!("wrote {}", path.display());
    Ok(())
}

fn previews(dir: &Path, gen: &Generator<f32>, data: &Prepared) -> Result<()> {
    let (x, _) = data.source.gather::<f32>(&(0..8.min(data.source.len())).collect::<Vec<_>>())?;
    let post = anchor_posterior(gen, &data.anchor)?;
    let mut rows = vec![x.clone()];
    let anchor = StyleLatent::new(post.psi.iter().map(|&v| v as f32).collect())?;
    rows.push(stylize(gen, &x, &anchor)?);
    for k in [-2.0, 2.0] {
        let shifted = post.psi.iter().zip(&post.xi).map(|(&m, &s)| (m + k * s) as f32);
        rows.push(stylize(gen, &x, &StyleLatent::new(shifted.collect())?)?);
    }
    let refs: Vec<&Tensor<f32>> = rows.iter().collect();
    write_ppm(&dir.join("preview_anchor.ppm"), &tile(&Tensor::concat_rows(&refs)?, rows.len())?)?;
    let random: Vec<Tensor<f32>> = (0..3)
        .map(|k| {
            let e = (0..gen.cfg.latent_dim)
                .map(|i| (((i * 5 + k * 11) % 7) as f32 - 3.0) / 2.0)
                .collect();
            stylize(gen, &x, &StyleLatent::new(e)?)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<f32>> = std::iter::once(&x).chain(&random).collect();
    write_ppm(&dir.join("preview_random.ppm"), &tile(&Tensor::concat_rows(&refs)?, refs.len())?)
}

fn rain(m: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = prepare_data(cfg)?;
    let all = load_checkpoint::<f32>(&path_or(m, "encoder", &dir, "encoder.ckpt"))?;
    let (gen, log) = train_generator(cfg, take_prefixed(&all, "enc")?, take_prefixed(&all, "dec")?, &data)?;
    let rows: Vec<Vec<Field>> = log
        .iter()
        .map(|r| {
            let v = r.values();
            std::iter::once(Field::Int(r.iter as u64))
                .chain(v[1..].iter().map(|&x| Field::Num(x)))
                .collect()
        })
        .collect();
    write_csv(&dir.join("rain_loss.csv"), &RAIN_LOG_HEADER, &rows)?;
    save_generator(&dir.join("generator.ckpt"), &gen)?;
    previews(&dir, &gen, &data)?;
    if let (Some(a), Some(b)) = (log.get(100), log.get(2000.min(log.len()) - 1)) {
        println!("L_RAIN at iteration {}: {:.6}, at iteration {}: {:.6}", a.iter, a.total, b.iter, b.total);
    }
    println!("wrote {}", dir.join("generator.ckpt").display());
    Ok(())
}

fn mining_rows(log: &[crate::miner::MiningLogRow]) -> Vec<Vec<Field>> {
    log.iter()
        .map(|r| {
            vec![
                Field::Int(r.outer_iter as u64),
                Field::Int(r.depth as u64),
                Field::Text(r.strategy.name().into()),
                Field::Num(r.l_task),
                Field::Num(r.l_consist),
                Field::Num(r.l_m),
                Field::Num(r.lr),
            ]
        })
        .collect()
}

fn train_asm(m: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let strategy = Strategy::from_name(m.get_one::<String>("strategy").expect("has default"))?;
    let data = prepare_data(cfg)?;
    let gen = match strategy {
        Strategy::SourceOnly => None,
        _ => Some(load_generator(cfg, &path_or(m, "generator", &dir, "generator.ckpt"))?),
    };
    let out = run_strategy(cfg, gen.as_ref(), &data, strategy, cfg.seed)?;
    let name = strategy.name();
    write_csv(&dir.join(format!("mining_{name}.csv")), &MINING_LOG_HEADER, &mining_rows(&out.run.log))?;
    let emb = embeddings(&out.model, &data.heldout)?;
    let width = emb.first().map_or(0, |e| e.1.len());
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..width).map(|i| format!("z{i}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<Field>> = emb
        .iter()
        .map(|(l, z)| std::iter::once(Field::Int(*l as u64)).chain(z.iter().map(|&v| Field::Num(v))).collect())
        .collect();
    write_csv(&dir.join(format!("embeddings_{name}.csv")), &header, &rows)?;
    let path = dir.join(format!("task_{name}.ckpt"));
    save_checkpoint(&path, &out.model.params)?;
    println!("{name}: target accuracy {:.4}", out.target_accuracy);
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(m: &ArgMatches, cfg: &RunConfig) -> Result<()> {
    let params = load_checkpoint::<f32>(Path::new(m.get_one::<String>("checkpoint").expect("required")))?;
    let model = TaskModel::from_params(cfg.net, params)?;
    let data = prepare_data(cfg)?;
    let (name, ds) = match m.get_one::<String>("split").expect("has default").as_str() {
        "val" => ("val", &data.val),
        "source" => ("source", &data.source),
        _ => ("target", &data.heldout),
    };
    println!("{name} accuracy {:.4}", evaluate(&model, ds)?);
    Ok(())
}

fn compare(m: &ArgMatches, cfg: &RunConfig) -> Result<i32> {
    if cfg.seeds < 3 {
        return Err(Error::config("seeds", format!("need at least 3 seeds, got {}", cfg.seeds)));
    }
    let dir = out_dir(cfg)?;
    let data = prepare_data(cfg)?;
    let gen = match m.get_one::<String>("generator") {
        Some(p) => load_generator(cfg, Path::new(p))?,
        None => {
            let pre = pretrain_encoder(cfg, &data)?;
            println!("source validation accuracy {:.4}", pre.val_accuracy);
            train_generator(cfg, pre.classifier.encoder, pre.decoder, &data)?.0
        }
    };
    let report = StrategyReport::run(cfg, &gen, &data)?;
    write_csv(&dir.join("report.csv"), &REPORT_HEADER, &report.rows())?;
    print!("{}", report.summary());
    Ok(if report.passed() { 0 } else { VERDICT_FAILED })
}

fn gradcheck(m: &ArgMatches, cfg: &RunConfig) -> Result<i32> {
    let trials: usize = parse_num(m, "trials")?;
    if let Some(op) = m.get_one::<String>("inject-fault") {
        let kind = OpKind::from_name(op).ok_or_else(|| Error::config("inject-fault", format!("unknown op `{op}`")))?;
        inject_fault(Some(kind));
    }
    let mut outcomes = check_primitives(trials, cfg.seed)?;
    outcomes.push(check_mining_gradient(trials, cfg.seed)?);
    inject_fault(None);
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "ok" } else { "FAIL" };
        println!("{:<20} {:>4} instances  max rel err {:.3e}  {verdict}", o.name, o.instances, o.max_rel_err);
        failed += usize::from(!o.passed());
    }
    println!("{} checks, {failed} failed", outcomes.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

fn dispatch(m: &ArgMatches) -> Result<i32> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = config_from(sub)?;
    match name {
        "gen-digits" => gen_digits(sub, &cfg).map(|_| 0),
        "pretrain-encoder" => pretrain(&cfg).map(|_| 0),
        "train-rain" => rain(sub, &cfg).map(|_| 0),
        "train-asm" => train_asm(sub, &cfg).map(|_| 0),
        "eval" => eval(sub, &cfg).map(|_| 0),
        "compare-strategies" => compare(sub, &cfg),
        "gradcheck" => gradcheck(sub, &cfg),
        "show-config" => {
            println!("{}", cfg.to_json());
            Ok(0)
        }
        other => unreachable!("unknown subcommand {other}"),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
