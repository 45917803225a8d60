use std::path::Path;
use std::process::{Command, Output};

use nbi::io::read_toml;
use nbi::pipeline::{BenchmarkSummary, EvaluationSummary, SplitManifest};

fn nbi(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbi"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = nbi(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

/// Small run configuration: few epochs so the whole pipeline takes seconds.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "[data]\nn = 60000\nseed = 3\n\n[split]\nseed = 3\n\n[cann.train]\nmax_epochs = 3\n",
    )
    .unwrap();
    path
}

/// Config pinning the data settings so later stages see the same inputs.
fn data_config(dir: &Path, n: usize, seed: u64) -> String {
    let path = dir.join(format!("data-{seed}.toml"));
    std::fs::write(&path, format!("[data]\nn = {n}\nseed = {seed}\n")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["generate", "--n", "5000", "--seed", "7"]);
    ok(&b, &["generate", "--n", "5000", "--seed", "7"]);
    for f in [
        "train.csv",
        "validation.csv",
        "test.csv",
        "split_manifest.toml",
    ] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let m: SplitManifest = read_toml(a.join("split_manifest.toml")).unwrap();
    assert_eq!(m.files.iter().map(|f| f.rows).sum::<usize>(), 5000);
    assert_eq!(m.n, 5000);
}

#[test]
fn zero_rows_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nbi(dir.path(), &["generate", "--n", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_top_k_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nbi(dir.path(), &["recommend", "--top-k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn benchmark_summary_is_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data_config(dir.path(), 40_000, 2);
    ok(dir.path(), &["--config", &cfg, "generate"]);
    ok(dir.path(), &["--config", &cfg, "fit-benchmark"]);
    let s: BenchmarkSummary = read_toml(dir.path().join("cycle-1/benchmark_summary.toml")).unwrap();
    assert!(s.converged);
    assert!(s.balance_residual.abs() < 1e-8);
}

#[test]
fn rank_deficient_terms_name_the_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data_config(dir.path(), 3000, 2);
    ok(dir.path(), &["--config", &cfg, "generate"]);
    let o = nbi(
        dir.path(),
        &["--config", &cfg, "fit-benchmark", "--terms", "1,x1,x1"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("rank-deficient") && err.contains("x1"),
        "{err}"
    );
}

#[test]
fn stale_inputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (
        data_config(dir.path(), 20_000, 4),
        data_config(dir.path(), 20_000, 5),
    );
    ok(dir.path(), &["--config", &a, "generate"]);
    ok(
        dir.path(),
        &["--config", &a, "fit-benchmark", "--terms", "1,x1,x9"],
    );
    ok(dir.path(), &["--config", &b, "generate"]);
    // the benchmark was fitted on the old split
    let o = nbi(
        dir.path(),
        &["--config", &b, "evaluate", "--competitor", "benchmark"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
}

#[test]
fn pipeline_outputs_and_stage_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    ok(&out, &["--config", cfg, "run-all", "--cycles", "1"]);

    let c1 = out.join("cycle-1");
    let header = |f: &str| {
        String::from_utf8(read(c1.join(f)))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("nid_ranking.csv"), "rank,feature_1,feature_2,score");
    assert_eq!(
        header("lift_predetermined.csv"),
        "bin,lower,upper,exposure_weight,waof,wapf_competitor,wapf_benchmark,rows"
    );
    assert_eq!(
        header("lift_quantile.csv"),
        header("lift_predetermined.csv")
    );
    assert_eq!(header("cann_epochs.csv"), "epoch,train_dev,val_dev");

    // a full ranking even when top-k exceeds the number of pairs
    ok(&out, &["--config", cfg, "detect", "--top-k", "1000"]);
    let top = String::from_utf8(read(c1.join("nid_top.csv"))).unwrap();
    assert_eq!(top.lines().count(), 1 + 45);

    // rerunning detection on the same weights gives the same ranking
    let ranking = read(c1.join("nid_ranking.csv"));
    ok(&out, &["--config", cfg, "detect"]);
    assert_eq!(read(c1.join("nid_ranking.csv")), ranking);

    // deleting one artifact reruns only its stage
    let cann_time = std::fs::metadata(c1.join("cann.json"))
        .unwrap()
        .modified()
        .unwrap();
    let bench_time = std::fs::metadata(c1.join("benchmark.json"))
        .unwrap()
        .modified()
        .unwrap();
    std::fs::remove_file(c1.join("lift_quantile.csv")).unwrap();
    ok(&out, &["--config", cfg, "run-all", "--cycles", "1"]);
    assert!(c1.join("lift_quantile.csv").exists());
    assert_eq!(
        std::fs::metadata(c1.join("cann.json"))
            .unwrap()
            .modified()
            .unwrap(),
        cann_time
    );
    assert_eq!(
        std::fs::metadata(c1.join("benchmark.json"))
            .unwrap()
            .modified()
            .unwrap(),
        bench_time
    );

    // comparing the benchmark with itself gives equal lift errors
    ok(
        &out,
        &["--config", cfg, "evaluate", "--competitor", "benchmark"],
    );
    let e: EvaluationSummary = read_toml(c1.join("evaluation_summary.toml")).unwrap();
    assert_eq!(e.predetermined.mae_lift, e.predetermined.mae_lift_benchmark);
    assert_eq!(e.quantile.mae_lift, e.quantile.mae_lift_benchmark);
}
