use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cono::ctensor::centered_dft;
use cono::pdedata::read_gfd;
use cono::{ComplexTensor, C64};

fn cono(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cono"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cono(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    cono(dir, args).status.code().unwrap()
}

const SMALL: &[&str] = &["--set", "lift_dim=8", "--set", "complex_dim=4", "--set", "unet_levels=1", "--modes", "8"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn burgers(dir: &Path) -> PathBuf {
    ok(dir, &["gen", "burgers", "--n", "20", "--nx", "32", "--nu", "0.1", "--seed", "7", "--out", "b.gfd"]);
    dir.join("b.gfd")
}

/// CSV rows without the wall-time column.
fn metrics(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(4);
            f.join(",")
        })
        .collect()
}

#[test]
fn gen_writes_readable_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["gen", "darcy", "--n", "4", "--nx", "16", "--beta", "0.01", "--seed", "7", "--out", "d.gfd"]);
    assert!(out.contains("sigma_d^2=") && out.contains("n=4") && out.contains("grid=16x16"));
    let ds = read_gfd(d.join("d.gfd")).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.meta_value("beta"), Some("0.01"));

    let a = std::fs::read(burgers(d)).unwrap();
    let b = std::fs::read(burgers(d)).unwrap();
    assert_eq!(a, b);
    assert_eq!(read_gfd(d.join("b.gfd")).unwrap().grid.sizes(), &[32]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["gen", "heat"]), 2);
    assert_eq!(code(d, &["gen", "burgers", "--nx", "30", "--n", "2"]), 2);
    assert_eq!(code(d, &["gen", "burgers", "--nu", "fast"]), 2);
    assert_eq!(code(d, &["train", "--data", "missing.gfd"]), 2);
    assert_eq!(code(d, &["eval", "--ckpt", "missing.ck", "--data", "missing.gfd"]), 2);
    assert_eq!(code(d, &["frft"]), 2);
    std::fs::write(d.join("bad.txt"), "1 2 3\n").unwrap();
    assert_eq!(code(d, &["frft", "--input", "bad.txt"]), 2);
    std::fs::write(d.join("bad.txt"), "one\n").unwrap();
    assert_eq!(code(d, &["frft", "--input", "bad.txt"]), 2);
    burgers(d);
    let err = cono(d, &["train", "--data", "b.gfd", "--set", "colour=red"]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("colour"));
    std::fs::write(d.join("c.conf"), "epochs = 1\nwidth = 3\n").unwrap();
    let err = cono(d, &["train", "--data", "b.gfd", "--config", "c.conf"]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("width"));
    assert_eq!(code(d, &["protocol", "warp", "--data", "b.gfd"]), 2);
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    burgers(d);
    let out = cono(d, &with_small(&["train", "--data", "b.gfd", "--epochs", "3", "--lr", "1e30"]));
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch") && err.contains("norms"), "{err}");
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    burgers(d);
    let run = |out: &str| ok(d, &with_small(&["train", "--data", "b.gfd", "--epochs", "2", "--out-dir", out]));
    run("a");
    run("b");
    for f in ["model.ck", "metrics.csv", "train.log"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    let csv_a = std::fs::read_to_string(d.join("a/metrics.csv")).unwrap();
    let csv_b = std::fs::read_to_string(d.join("b/metrics.csv")).unwrap();
    assert_eq!(metrics(&csv_a), metrics(&csv_b));
    assert_eq!(std::fs::read(d.join("a/model.ck")).unwrap(), std::fs::read(d.join("b/model.ck")).unwrap());
    assert!(csv_a.starts_with("condition,seed,rel_l2,std,wall_s,alpha_x,alpha_y,config_hash\ntest,0,"));
    let log = std::fs::read_to_string(d.join("a/train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    // config file is overridden by flags
    std::fs::write(d.join("c.conf"), "# short run\nepochs = 1\nlr = 0.002\n").unwrap();
    ok(d, &with_small(&["train", "--data", "b.gfd", "--config", "c.conf", "--out-dir", "c"]));
    let log = std::fs::read_to_string(d.join("c/train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 1);
    assert!(log.contains("lr = 0.002"));
    ok(d, &with_small(&["train", "--data", "b.gfd", "--config", "c.conf", "--epochs", "3", "--out-dir", "c"]));
    let log = std::fs::read_to_string(d.join("c/train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 3);

    ok(d, &with_small(&["train", "--data", "b.gfd", "--epochs", "2", "--seed", "5", "--out-dir", "s"]));
    let csv_s = std::fs::read_to_string(d.join("s/metrics.csv")).unwrap();
    assert_ne!(metrics(&csv_s), metrics(&csv_a));

    ok(d, &with_small(&["train", "--data", "b.gfd", "--epochs", "2", "--ablation", "fourier", "--out-dir", "f"]));
    let row = std::fs::read_to_string(d.join("f/metrics.csv")).unwrap();
    let fields: Vec<&str> = row.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[5], "1");
    assert!(std::fs::read_to_string(d.join("f/train.log")).unwrap().contains("final_alpha=1\n"));

    let out = ok(d, &["eval", "--ckpt", "a/model.ck", "--data", "b.gfd", "--resolution", "128"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("res=128,"));
    let again = ok(d, &["eval", "--ckpt", "a/model.ck", "--data", "b.gfd", "--resolution", "128", "--out", "e.csv"]);
    assert_eq!(metrics(&out), metrics(&again));
    assert_eq!(std::fs::read_to_string(d.join("e.csv")).unwrap(), again);
}

#[test]
fn protocol_commands_emit_condition_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    burgers(d);
    let noise = ok(
        d,
        &with_small(&["protocol", "noise", "--data", "b.gfd", "--epochs", "1", "--gammas", "0.01,0.05", "--out", "n.csv"]),
    );
    let names: Vec<&str> = noise.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "clean:g=0.01",
            "train_noisy:g=0.01",
            "test_noisy:g=0.01",
            "both:g=0.01",
            "clean:g=0.05",
            "train_noisy:g=0.05",
            "test_noisy:g=0.05",
            "both:g=0.05"
        ]
    );
    assert!(d.join("n.csv").exists());

    let zero = ok(d, &with_small(&["protocol", "noise", "--data", "b.gfd", "--epochs", "1", "--gammas", "0"]));
    let errs: Vec<&str> = zero.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(errs.len(), 4);
    assert!(errs.iter().all(|e| *e == errs[0]));

    let ablation = ok(d, &with_small(&["protocol", "ablation", "--data", "b.gfd", "--epochs", "1"]));
    let names: Vec<&str> = ablation.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "vanilla", "fourier", "no_alias", "no_bias"]);
}

#[test]
fn ood_protocol_uses_extra_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = |beta: &str, n: &str, out: &str| {
        ok(d, &["gen", "darcy", "--n", n, "--nx", "16", "--beta", beta, "--seed", "3", "--out", out]);
    };
    gen("1", "20", "base.gfd");
    gen("10", "4", "b10.gfd");
    let args = [
        "protocol", "ood_beta", "--data", "base.gfd", "--extra", "b10.gfd", "--betas", "1,10", "--epochs", "1",
        "--set", "lift_dim=4", "--set", "complex_dim=2", "--set", "unet_levels=1", "--modes", "4",
    ];
    let out = ok(d, &args);
    let names: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["beta=1:control", "beta=10"]);
    let mut missing = args.to_vec();
    missing[7] = "1,100";
    let err = cono(d, &missing);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("beta=100"));
}

fn read_output(text: &str) -> Vec<C64> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|p| p.parse().unwrap()).collect();
            C64::new(v[0], v[1])
        })
        .collect()
}

#[test]
fn frft_utility() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x: Vec<C64> = (0..24).map(|j| C64::new((j as f64 * 0.37).sin(), (j as f64 * 0.11).cos() - 0.5)).collect();
    let text: String = x.iter().map(|v| format!("{} {}\n", v.re, v.im)).collect();
    std::fs::write(d.join("x.txt"), text).unwrap();

    let y0 = read_output(&ok(d, &["frft", "--input", "x.txt", "--alpha", "0"]));
    assert_eq!(y0.len(), 24);
    for (a, b) in y0.iter().zip(&x) {
        assert!((a - b).norm() <= 1e-12);
    }
    ok(d, &["frft", "--input", "x.txt", "--alpha", "1", "--out", "y.txt"]);
    let y1 = read_output(&std::fs::read_to_string(d.join("y.txt")).unwrap());
    let oracle = centered_dft(&ComplexTensor::new(vec![24], x.clone()).unwrap(), 0, false).unwrap();
    for (a, b) in y1.iter().zip(oracle.data()) {
        assert!((a - b).norm() <= 1e-8);
    }
    let neg = ok(d, &["frft", "--input", "x.txt", "--alpha", "-0.5"]);
    assert!(neg.starts_with("# frft alpha=-0.5 shape=24"));

    // dataset input uses the first input field
    burgers(d);
    let yb = read_output(&ok(d, &["frft", "--input", "b.gfd", "--alpha", "0"]));
    let ds = read_gfd(d.join("b.gfd")).unwrap();
    assert_eq!(yb.len(), 32);
    for (a, b) in yb.iter().zip(ds.samples[0].input.data()) {
        assert!((a - b).norm() <= 1e-12);
    }

    let check = ok(d, &["frft", "--check", "--n", "64"]);
    assert!(check.lines().count() >= 10);
    assert!(check.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn threads_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--threads", "1", "gen", "burgers", "--n", "3", "--nx", "16", "--out", "t.gfd"]);
    assert_eq!(code(d, &["--threads", "0", "frft", "--check", "--n", "8"]), 2);
}
