use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cono::frft::{frft_nd, plans_for, property_suite};
use cono::model::ConoModel;
use cono::pdedata::{gen_burgers, gen_darcy, read_gfd, sigma_d, split, write_gfd, GridDataset, GFD_MAGIC};
use cono::train::{
    beta_key, config_hash, evaluate, fit_with, resolution_key, run_protocol, write_csv, ProtocolData, ProtocolKind,
    ProtocolRow, TrainConfig,
};
use cono::{ComplexTensor, Error, Result, C64};

use crate::settings::Settings;
use crate::{Common, Pde};

pub fn usage(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

/// Settings from `--config`, then `--set`, then `--seed`, then the named flags.
fn settings(common: &Common, flags: Vec<(String, String)>) -> Result<Settings> {
    let mut all = Vec::new();
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(&format!("--set expects KEY=VALUE, got {s:?}")))?;
        all.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        all.push(("seed".into(), seed.to_string()));
    }
    all.extend(flags);
    Settings::load(common.config.as_deref(), &all)
}

fn emit_csv(rows: &[ProtocolRow], out: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    if let Some(path) = out {
        std::fs::write(path, &buf)?;
    }
    std::io::stdout().write_all(&buf)?;
    Ok(())
}

pub fn gen(pde: Pde, out: Option<std::path::PathBuf>, common: &Common, flags: Vec<(String, String)>) -> Result<()> {
    let s = settings(common, flags)?;
    let (ds, name) = match pde {
        Pde::Burgers => (gen_burgers(s.n, s.nx.unwrap_or(128), s.nu, s.dt_out, s.seed)?, "burgers"),
        Pde::Darcy => (gen_darcy(s.n, s.nx.unwrap_or(64), s.beta, s.seed)?, "darcy"),
    };
    let path = out.unwrap_or_else(|| format!("{name}.gfd").into());
    write_gfd(&ds, &path)?;
    let grid: Vec<String> = ds.grid.sizes().iter().map(|n| n.to_string()).collect();
    let params: Vec<String> = ds
        .meta
        .iter()
        .filter(|(k, _)| matches!(k.as_str(), "nu" | "dt_out" | "beta" | "seed"))
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!(
        "wrote {}: {name} n={} grid={} {} sigma_d^2={:.6e}",
        path.display(),
        ds.len(),
        grid.join("x"),
        params.join(" "),
        sigma_d(&ds).powi(2)
    );
    Ok(())
}

pub fn train(data: &Path, out_dir: &Path, common: &Common, flags: Vec<(String, String)>) -> Result<()> {
    let s = settings(common, flags)?;
    let ds = read_gfd(data)?;
    let cfg = s.model_for(ds.grid.spatial_dims(), ds.c_in, ds.c_out)?;
    let (train, val, test) = split(&ds, (0.8, 0.1, 0.1), s.split_seed)?;
    let mut model = ConoModel::build(&cfg)?;
    eprintln!(
        "training {} parameters on {} samples ({} val, {} test)",
        model.param_count(),
        train.len(),
        val.len(),
        test.len()
    );
    let mut report = fit_with(&mut model, &train, &val, &s.train, |e| {
        let alphas: Vec<String> = e.alphas.iter().map(|a| format!("{a:.4}")).collect();
        eprintln!(
            "epoch {:>3}  train {:.5e}  val {:.5e}  alpha {}",
            e.epoch,
            e.train_rel_l2,
            e.val_rel_l2,
            alphas.join(",")
        );
    })?;
    let test_err = evaluate(&model, &test, None)?;
    report.test_rel_l2 = Some(test_err);

    std::fs::create_dir_all(out_dir)?;
    model.save_checkpoint(&out_dir.join("model.ck"))?;
    let row = ProtocolRow {
        condition: "test".into(),
        seed: s.train.seed,
        rel_l2: test_err,
        std: 0.0,
        wall_s: report.wall_s,
        alphas: report.final_alphas.clone(),
        config_hash: report.config_hash.clone(),
    };
    let mut csv = Vec::new();
    write_csv(&[row], &mut csv)?;
    std::fs::write(out_dir.join("metrics.csv"), csv)?;
    let log = format!(
        "{}# model\n{}# training\n{}",
        report.to_log(),
        model.config.to_text(),
        s.train.to_text()
    );
    std::fs::write(out_dir.join("train.log"), log)?;
    println!(
        "test_rel_l2={test_err} best_epoch={} alpha={:?} out={}",
        report.best_epoch,
        report.final_alphas,
        out_dir.display()
    );
    Ok(())
}

pub fn eval(ckpt: &Path, data: &Path, resolution: Option<usize>, out: Option<&Path>) -> Result<()> {
    if !ckpt.exists() {
        return Err(usage(&format!("checkpoint {} not found", ckpt.display())));
    }
    let model = ConoModel::load_checkpoint(ckpt)?;
    let ds = read_gfd(data)?;
    let start = Instant::now();
    let rel = evaluate(&model, &ds, resolution)?;
    let condition = match resolution {
        Some(r) => resolution_key(r),
        None => "eval".to_string(),
    };
    let row = ProtocolRow {
        config_hash: config_hash(&model.config, &TrainConfig::default(), &condition),
        condition,
        seed: model.config.seed,
        rel_l2: rel,
        std: 0.0,
        wall_s: start.elapsed().as_secs_f64(),
        alphas: model.alphas(),
    };
    emit_csv(&[row], out)
}

/// Key of an extra evaluation set relative to the base set.
fn extra_key(base: &GridDataset, ds: &GridDataset) -> Result<String> {
    let sizes = ds.grid.sizes();
    if sizes != base.grid.sizes() {
        if sizes.iter().any(|&s| s != sizes[0]) {
            return Err(usage(&format!("extra set has a non-square grid {sizes:?}")));
        }
        return Ok(resolution_key(sizes[0]));
    }
    let beta = |d: &GridDataset| d.meta_value("beta").and_then(|b| b.parse::<f64>().ok());
    match (beta(ds), beta(base)) {
        (Some(b), Some(b0)) if b != b0 => Ok(beta_key(b)),
        _ => Err(usage("extra set differs from the base set in neither grid nor beta")),
    }
}

pub fn protocol(
    kind: &str,
    data: &Path,
    extras: &[std::path::PathBuf],
    out: Option<&Path>,
    common: &Common,
    flags: Vec<(String, String)>,
) -> Result<()> {
    let kind: ProtocolKind = kind.parse()?;
    let s = settings(common, flags)?;
    let base = read_gfd(data)?;
    let mut sets = BTreeMap::new();
    for path in extras {
        let ds = read_gfd(path)?;
        sets.insert(extra_key(&base, &ds)?, ds);
    }
    let cfg = s.model_for(base.grid.spatial_dims(), base.c_in, base.c_out)?;
    let spec = s.protocol(cfg);
    let rows = run_protocol(kind, &spec, &ProtocolData { base, extras: sets })?;
    emit_csv(&rows, out)
}

/// First input field of a dataset file, or a text column of `re [im]` values.
fn read_signal(path: &Path) -> Result<ComplexTensor> {
    let bytes = std::fs::read(path).map_err(|e| usage(&format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(GFD_MAGIC) {
        let ds = read_gfd(path)?;
        return ds
            .samples
            .first()
            .map(|s| s.input.slice_channels(0, 1))
            .unwrap_or_else(|| Err(usage("dataset has no samples")));
    }
    let text = String::from_utf8(bytes).map_err(|_| usage("signal file is neither a dataset nor text"))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<f64> = line
            .split_whitespace()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(&format!("line {}: expected `re [im]`, got {line:?}", i + 1)))?;
        match parts[..] {
            [re] => values.push(C64::new(re, 0.0)),
            [re, im] => values.push(C64::new(re, im)),
            _ => return Err(usage(&format!("line {}: expected one or two numbers", i + 1))),
        }
    }
    if values.is_empty() {
        return Err(usage("signal file holds no values"));
    }
    ComplexTensor::new(vec![1, values.len()], values)
}

pub fn frft(input: &Path, alpha: f64, out: Option<&Path>) -> Result<()> {
    if !alpha.is_finite() {
        return Err(usage("--alpha must be finite"));
    }
    let x = read_signal(input)?;
    let plans = plans_for(x.shape())?;
    let y = frft_nd(&plans, &x, &vec![alpha; x.ndim() - 1], false)?;
    let shape: Vec<String> = y.spatial().iter().map(|n| n.to_string()).collect();
    let mut text = format!("# frft alpha={alpha} shape={}\n", shape.join("x"));
    for v in y.data() {
        text.push_str(&format!("{} {}\n", v.re, v.im));
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn frft_check(n: usize, seed: u64) -> Result<()> {
    if n < 4 {
        return Err(usage("--n must be at least 4"));
    }
    let checks = property_suite(n, seed)?;
    for c in &checks {
        println!(
            "{} {:<38} error {:.3e} (bound {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.bound
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} of {} properties failed for n = {n}", checks.len())));
    }
    Ok(())
}
