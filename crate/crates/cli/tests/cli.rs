//! End-to-end runs of the `idff` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

const SMALL: &str = "[train]\niters = 40\nbatch_size = 32\nhidden_dim = 16\ndepth = 2\n\n\
                     [experiment]\ntrain_rows = 300\neval_samples = 64\n";

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("idff-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    dir
}

fn idff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idff"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = idff(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().skip(1).filter(|l| !l.trim().is_empty()).count()
}

fn value_after(stdout: &str, key: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {stdout}"));
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn exit_codes() {
    let dir = workdir("exit");
    assert_eq!(idff(&dir, &["datagen", "--name", "spirals", "--out", "x.csv"]).status.code(), Some(2));
    assert_eq!(idff(&dir, &["train", "--data", "missing.csv", "--out", "m.ckpt"]).status.code(), Some(1));
    std::fs::write(dir.join("bad.toml"), "[train]\niterations = 3\n").unwrap();
    assert_eq!(idff(&dir, &["--config", "bad.toml", "datagen", "--name", "two_moons", "--out", "x.csv"]).status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn datagen_train_sample_eval() {
    let dir = workdir("flow");
    let out = ok(&dir, &["datagen", "--name", "eight_gaussians", "--rows", "4096", "--seed", "7", "--out", "d.csv"]);
    assert!(out.starts_with("# resolved config"));
    assert_eq!(data_rows(&dir.join("d.csv")), 4096);

    ok(&dir, &["datagen", "--name", "lorenz", "--steps", "2000", "--out", "l.csv"]);
    assert_eq!(data_rows(&dir.join("l.csv")), 2000);

    ok(&dir, &["train", "--data", "d.csv", "--k", "2", "--iters", "0", "--out", "init.ckpt"]);
    ok(&dir, &["train", "--data", "d.csv", "--k", "2", "--iters", "0", "--out", "init2.ckpt"]);
    assert_eq!(std::fs::read(dir.join("init.ckpt")).unwrap(), std::fs::read(dir.join("init2.ckpt")).unwrap());

    for name in ["a", "b"] {
        ok(&dir, &["--config", "small.toml", "train", "--data", "d.csv", "--k", "2", "--out", &format!("{name}.ckpt")]);
    }
    assert_eq!(
        std::fs::read(dir.join("a.ckpt.trace.csv")).unwrap(),
        std::fs::read(dir.join("b.ckpt.trace.csv")).unwrap()
    );
    ok(&dir, &["--config", "small.toml", "train", "--data", "d.csv", "--use-ot", "--batch-size", "256", "--iters", "3", "--out", "ot.ckpt"]);
    let trace = std::fs::read_to_string(dir.join("ot.ckpt.trace.csv")).unwrap();
    assert!(trace.lines().next().unwrap().contains("cost"));

    ok(&dir, &["sample", "--model", "a.ckpt", "--nfe", "10", "--n", "4096", "--out", "s.csv"]);
    assert_eq!(data_rows(&dir.join("s.csv")), 4096);
    ok(&dir, &["sample", "--model", "a.ckpt", "--gamma1", "0", "--gamma2", "0", "--n", "64", "--out", "base.csv"]);

    // Identical sets give exactly -2 (1 - mean off-diagonal kernel) / n.
    let same = ok(&dir, &["eval", "mmd", "--a", "s.csv", "--b", "s.csv"]);
    let m = value_after(&same, "mmd2 = ");
    assert!((-2.0 / 4096.0..=0.0).contains(&m), "{same}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn zero_drift_likelihood_is_standard_normal() {
    let dir = workdir("lik");
    ok(&dir, &["datagen", "--name", "two_moons", "--rows", "64", "--out", "d.csv"]);
    ok(&dir, &["train", "--data", "d.csv", "--iters", "0", "--out", "z.ckpt"]);
    let out = ok(&dir, &["likelihood", "--model", "z.ckpt", "--x", "0,0", "--div", "exact_fd"]);
    let v = value_after(&out, "log p(0,0) = ");
    assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-6, "{v}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn experiment_self_test_writes_report() {
    let dir = workdir("exp");
    ok(&dir, &["--config", "small.toml", "experiment", "order-comparison", "--seeds", "3", "--self-test", "--out", "rep"]);
    let csv = std::fs::read_to_string(dir.join("rep/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("self_test,") && !l.ends_with("summary")).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    for r in rows {
        let mmd2: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!((-2.0 / 64.0..=0.0).contains(&mmd2), "{r}");
    }
    assert!(dir.join("rep/config.toml").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sampling_cost_is_linear_in_nfe() {
    let dir = workdir("nfe");
    ok(&dir, &["datagen", "--name", "eight_gaussians", "--rows", "64", "--out", "d.csv"]);
    ok(&dir, &["train", "--data", "d.csv", "--iters", "0", "--out", "m.ckpt"]);
    let time = |nfe: &str| {
        // Best of three to damp scheduler noise.
        (0..3)
            .map(|_| {
                let t = Instant::now();
                ok(&dir, &["sample", "--model", "m.ckpt", "--nfe", nfe, "--n", "20000", "--out", "s.csv"]);
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (t2, t5) = (time("2"), time("5"));
    assert!(t5 / 5.0 < 2.0 * t2 / 2.0, "nfe2 {t2:.3}s, nfe5 {t5:.3}s");
    let _ = std::fs::remove_dir_all(&dir);
}
