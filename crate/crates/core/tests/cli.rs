use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn asm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny(dir: &Path) -> Vec<String> {
    [
        "--source_count=120",
        "--val_count=40",
        "--target_count=41",
        "--pretrain_iters=20",
        "--rain_iters=20",
        "--rain_warmup=2",
        "--total_iters=4",
        "--depth_n=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("--out_dir={}", dir.display())])
    .collect()
}

fn run_tiny(sub: &[&str], dir: &Path) -> Output {
    let mut args: Vec<String> = sub.iter().map(|s| s.to_string()).collect();
    args.extend(tiny(dir));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    asm(&refs)
}

#[test]
fn show_config_applies_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"beta": 0.2, "depth_n": 3}"#).unwrap();
    let o = asm(&["show-config", "--config", cfg.to_str().unwrap(), "--depth_n", "7"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["beta"], 0.2);
    assert_eq!(v["depth_n"], 7);
    assert_eq!(v["lambda"], 2e-4);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(asm(&["show-config", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(asm(&["show-config", "--beta", "-1"]).status.code(), Some(1));
    assert_eq!(asm(&["show-config", "--config", "/nonexistent/c.json"]).status.code(), Some(1));
}

#[test]
fn missing_data_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_tiny(&["pretrain-encoder", "--source_images=/nonexistent/img.idx", "--source_labels=/nonexistent/lbl.idx"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn malformed_idx_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    let lbl = dir.path().join("lbl.idx");
    let o = asm(&["gen-digits", "--count", "300", "--images", img.to_str().unwrap(), "--labels", lbl.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut bytes = fs::read(&img).unwrap();
    bytes.truncate(bytes.len() - 5);
    fs::write(&img, bytes).unwrap();
    let o = run_tiny(
        &["pretrain-encoder", &format!("--source_images={}", img.display()), &format!("--source_labels={}", lbl.display())],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn idx_input_files_feed_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    let lbl = dir.path().join("lbl.idx");
    assert!(asm(&["gen-digits", "--count", "200", "--images", img.to_str().unwrap(), "--labels", lbl.to_str().unwrap()])
        .status
        .success());
    let o = run_tiny(
        &["pretrain-encoder", &format!("--source_images={}", img.display()), &format!("--source_labels={}", lbl.display())],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("source validation accuracy"));
}

#[test]
fn gradcheck_passes_and_catches_a_broken_rule() {
    let ok = asm(&["gradcheck", "--trials", "3"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("0 failed"));
    for op in ["adain", "conv2d", "consistency"] {
        let bad = asm(&["gradcheck", "--trials", "3", "--inject-fault", op]);
        assert_eq!(bad.status.code(), Some(1), "fault in {op} went unnoticed:\n{}", stdout(&bad));
        assert!(stdout(&bad).contains("FAIL"));
    }
    assert_eq!(asm(&["gradcheck", "--inject-fault", "nonsense"]).status.code(), Some(1));
}

#[test]
fn pipeline_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for rep in 0..2 {
        let out = dir.path().join(format!("r{rep}"));
        for sub in [
            &["pretrain-encoder"][..],
            &["train-rain"],
            &["train-asm"],
            &["train-asm", "--strategy", "random"],
        ] {
            let o = run_tiny(sub, &out);
            assert!(o.status.success(), "{sub:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let rain = fs::read_to_string(out.join("rain_loss.csv")).unwrap();
        assert_eq!(rain.lines().next(), Some("iter,l_c,l_s,l_kl,l_rec,total"));
        assert_eq!(rain.lines().count(), 21);
        let mining = fs::read_to_string(out.join("mining_asm.csv")).unwrap();
        assert_eq!(mining.lines().next(), Some("outer_iter,depth,strategy,l_task,l_consist,l_m,lr"));
        assert_eq!(mining.lines().count(), 1 + 4 * 2);
        for ppm in ["preview_anchor.ppm", "preview_random.ppm"] {
            let bytes = fs::read(out.join(ppm)).unwrap();
            assert!(asm_core::io::decode_ppm(&bytes).is_ok());
        }
        let o = run_tiny(&["eval", "--checkpoint", out.join("task_asm.ckpt").to_str().unwrap()], &out);
        assert!(o.status.success());
        assert!(stdout(&o).starts_with("target accuracy"));
        snapshots.push(
            ["rain_loss.csv", "mining_asm.csv", "mining_random.csv", "embeddings_asm.csv", "task_asm.ckpt"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert!(snapshots[0] == snapshots[1], "re-run changed an output");
}

#[test]
fn source_only_needs_no_generator() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_tiny(&["train-asm", "--strategy", "source_only"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("generator.ckpt").exists());
    let o = run_tiny(&["train-asm", "--strategy", "asm"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_strategies_needs_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_tiny(&["compare-strategies", "--seeds", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_strategies_reports_and_sets_verdict_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_tiny(&["compare-strategies", "--seeds", "3"], dir.path());
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("verdict: PASS") == (code == Some(0)));
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "strategy,seed,target_accuracy,inputs");
    assert_eq!(lines.len(), 1 + 4 * 3 + 4);
    let hashes: std::collections::BTreeSet<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(hashes.len(), 1, "all runs must share one input hash");
}
