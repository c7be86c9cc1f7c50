//! Optimisation loop, metric, evaluation and the experiment protocols.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::ctensor::{ComplexTensor, C64};
use crate::error::{Error, Result};
use crate::model::{parse_key_values, Ablation, ConoConfig, ConoModel, Normalizer};
use crate::pdedata::{add_noise, resample, split, GridDataset, NoiseTarget};

/// Mean over samples of `‖pred − target‖² / ‖target‖²`.
pub fn relative_l2(preds: &[ComplexTensor], targets: &[&ComplexTensor]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::shape(
            "relative_l2",
            format!("{} predictions for {} targets", preds.len(), targets.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("relative L2 of an empty set".into()));
    }
    let mut total = 0.0;
    for (j, (p, t)) in preds.iter().zip(targets).enumerate() {
        let denom = t.norm_sqr();
        if denom <= 0.0 {
            return Err(Error::InvalidArgument(format!("target {j} has zero norm")));
        }
        total += p.sub(t)?.norm_sqr() / denom;
    }
    Ok(total / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Cosine,
    Constant,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (cosine, constant)"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
        })
    }
}

/// Optimiser hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 50,
            batch: 16,
            seed: 0,
            weight_decay: 0.0,
            schedule: Schedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "lr = {:?}\nepochs = {}\nbatch = {}\nseed = {}\nweight_decay = {:?}\nschedule = {}\n",
            self.lr, self.epochs, self.batch, self.seed, self.weight_decay, self.schedule
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "schedule" => self.schedule = value.trim().parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut hp = Self::default();
        for (k, v) in parse_key_values(text)? {
            hp.set(&k, &v)?;
        }
        hp.validate()?;
        Ok(hp)
    }

    /// Learning rate at optimiser step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine if total == 0 => self.lr,
            Schedule::Cosine => 0.5 * self.lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

/// Short hex digest identifying a model and training configuration.
pub fn config_hash(model: &ConoConfig, hp: &TrainConfig, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.to_text());
    h.update(hp.to_text());
    h.update(extra);
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Adam moments for every parameter, Re and Im treated as separate reals.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<ComplexTensor>,
    v: Vec<ComplexTensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied as `p ← p − lr·wd·p`.
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<ComplexTensor> = store.iter().map(|p| ComplexTensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update from the gradients held in `store`.
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimiser holds {} moments for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr, wd) = (state.beta1, state.beta2, state.eps, state.lr, state.weight_decay);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let upd = |m: f64, v: f64| (m / c1) / ((v / c2).sqrt() + eps);
    for id in 0..store.len() {
        let p = store.get(id);
        if p.frozen {
            continue;
        }
        let (real, grad) = (p.real_constrained, p.grad.clone());
        let (m, v) = (state.m[id].data_mut(), state.v[id].data_mut());
        let value = store.value_mut(id).data_mut();
        for k in 0..value.len() {
            let g = grad.data()[k];
            m[k] = C64::new(b1 * m[k].re + (1.0 - b1) * g.re, b1 * m[k].im + (1.0 - b1) * g.im);
            v[k] = C64::new(
                b2 * v[k].re + (1.0 - b2) * g.re * g.re,
                b2 * v[k].im + (1.0 - b2) * g.im * g.im,
            );
            let mut x = value[k];
            if wd > 0.0 {
                x -= x * (lr * wd);
            }
            x.re -= lr * upd(m[k].re, v[k].re);
            if !real {
                x.im -= lr * upd(m[k].im, v[k].im);
            }
            value[k] = if real { C64::new(x.re, 0.0) } else { x };
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_rel_l2: f64,
    pub val_rel_l2: f64,
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were retained (0 = initial weights).
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_rel_l2: Option<f64>,
    pub wall_s: f64,
    pub config_hash: String,
    pub n_params: usize,
    /// Orders of the retained weights.
    pub final_alphas: Vec<f64>,
}

impl RunReport {
    /// Everything except wall time, for determinism comparisons.
    pub fn same_metrics(&self, other: &RunReport) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val.to_bits() == other.best_val.to_bits()
            && self.test_rel_l2.map(f64::to_bits) == other.test_rel_l2.map(f64::to_bits)
            && self.config_hash == other.config_hash
            && self.final_alphas == other.final_alphas
    }

    /// Line-oriented `key=value` log.
    pub fn to_log(&self) -> String {
        let alphas = |a: &[f64]| a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut out = format!(
            "config_hash={}\nn_params={}\nbest_epoch={}\nbest_val_rel_l2={}\n",
            self.config_hash, self.n_params, self.best_epoch, self.best_val
        );
        if let Some(t) = self.test_rel_l2 {
            out.push_str(&format!("test_rel_l2={t}\n"));
        }
        out.push_str(&format!("final_alpha={}\nwall_s={:.3}\n", alphas(&self.final_alphas), self.wall_s));
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch={} lr={} train_rel_l2={} val_rel_l2={} alpha={}\n",
                e.epoch,
                e.lr,
                e.train_rel_l2,
                e.val_rel_l2,
                alphas(&e.alphas)
            ));
        }
        out
    }
}

fn norm_diagnostics(store: &ParamStore) -> String {
    let mut norms = store.norms();
    let bad = norms.iter().filter(|(_, n)| !n.is_finite()).count();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<String> = norms.iter().take(6).map(|(k, n)| format!("{k}={n:.3e}")).collect();
    format!("{bad} non-finite parameter tensors; largest norms: {}", top.join(", "))
}

fn check_compatible(model: &ConoModel, ds: &GridDataset, what: &str) -> Result<()> {
    let cfg = &model.config;
    if ds.grid.spatial_dims() != cfg.spatial_dims || ds.c_in != cfg.in_channels || ds.c_out != cfg.out_channels {
        return Err(Error::Config(format!(
            "{what} set has {}-d grid with {} -> {} channels, model expects {}-d with {} -> {}",
            ds.grid.spatial_dims(),
            ds.c_in,
            ds.c_out,
            cfg.spatial_dims,
            cfg.in_channels,
            cfg.out_channels
        )));
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} set is empty")));
    }
    Ok(())
}

/// Train with mini-batch Adam on the mean relative L2 loss.
///
/// The normalizer is refit on `train`, and an unset transform grid is pinned
/// to the training grid. The weights with the lowest validation error are
/// restored at the end.
pub fn fit(model: &mut ConoModel, train: &GridDataset, val: &GridDataset, hp: &TrainConfig) -> Result<RunReport> {
    fit_with(model, train, val, hp, |_| {})
}

/// As [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with(
    model: &mut ConoModel,
    train: &GridDataset,
    val: &GridDataset,
    hp: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunReport> {
    hp.validate()?;
    check_compatible(model, train, "training")?;
    check_compatible(model, val, "validation")?;
    let start = Instant::now();
    if model.config.transform_grid.is_none() {
        model.set_transform_grid(Some(train.grid.sizes().to_vec()))?;
    }
    model.normalizer = Normalizer::fit(&train.inputs(), &train.outputs())?;
    let n = train.len();
    let batch = hp.batch.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * hp.epochs;
    let mut adam = AdamState::new(&model.store, hp.lr);
    adam.weight_decay = hp.weight_decay;

    let snapshot = |store: &ParamStore| -> Vec<ComplexTensor> { store.iter().map(|p| p.value.clone()).collect() };
    let mut best_val = evaluate(model, val, None)?;
    let mut best_epoch = 0;
    let mut best = snapshot(&model.store);
    let mut records = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    for epoch in 1..=hp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let weight = 1.0 / chunk.len() as f64;
            let results: Vec<Result<(f64, Vec<ComplexTensor>)>> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &train.samples[i];
                    model.loss_and_grads(&s.input, &s.output, weight)
                })
                .collect();
            let fail = |detail: String| {
                Error::Numerical(format!(
                    "training diverged at epoch {epoch}, batch {b}: {detail}; {}",
                    norm_diagnostics(&model.store)
                ))
            };
            let mut sum: Option<Vec<ComplexTensor>> = None;
            for r in results {
                let (loss, grads) = r.map_err(|e| match e {
                    Error::Numerical(msg) => fail(msg),
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(fail(format!("loss is {loss}")));
                }
                epoch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let grads = sum.expect("non-empty batch");
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(fail("non-finite gradient".into()));
            }
            model.store.set_grads(&grads, false)?;
            adam.lr = hp.lr_at(step, total_steps);
            epoch_lr = adam.lr;
            adam_step(&mut adam, &mut model.store)?;
            step += 1;
        }
        let val_loss = evaluate(model, val, None).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "validation after epoch {epoch} failed: {msg}; {}",
                norm_diagnostics(&model.store)
            )),
            other => other,
        })?;
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = snapshot(&model.store);
        }
        let rec = EpochRecord {
            epoch,
            lr: epoch_lr,
            train_rel_l2: epoch_loss / n as f64,
            val_rel_l2: val_loss,
            alphas: model.alphas(),
        };
        on_epoch(&rec);
        records.push(rec);
    }
    for (id, v) in best.into_iter().enumerate() {
        *model.store.value_mut(id) = v;
    }
    model.store.zero_grads();
    Ok(RunReport {
        epochs: records,
        best_epoch,
        best_val,
        test_rel_l2: None,
        wall_s: start.elapsed().as_secs_f64(),
        config_hash: config_hash(&model.config, hp, ""),
        n_params: model.param_count(),
        final_alphas: model.alphas(),
    })
}

/// Predictions for every sample, in order.
pub fn predict_all(model: &ConoModel, ds: &GridDataset) -> Result<Vec<ComplexTensor>> {
    ds.samples.par_iter().map(|s| model.predict(&s.input)).collect()
}

/// Mean relative L2 on `ds`, optionally after resampling to `at_resolution`
/// points per dimension.
pub fn evaluate(model: &ConoModel, ds: &GridDataset, at_resolution: Option<usize>) -> Result<f64> {
    check_compatible(model, ds, "evaluation")?;
    match at_resolution {
        Some(r) if ds.grid.sizes().iter().any(|&s| s != r) => {
            let moved = resample(ds, r)?;
            relative_l2(&predict_all(model, &moved)?, &moved.outputs())
        }
        _ => relative_l2(&predict_all(model, ds)?, &ds.outputs()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolKind {
    SuperRes,
    OodBeta,
    DataEfficiency,
    Noise,
    Ablation,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::SuperRes,
        ProtocolKind::OodBeta,
        ProtocolKind::DataEfficiency,
        ProtocolKind::Noise,
        ProtocolKind::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::SuperRes => "superres",
            ProtocolKind::OodBeta => "ood_beta",
            ProtocolKind::DataEfficiency => "data_efficiency",
            ProtocolKind::Noise => "noise",
            ProtocolKind::Ablation => "ablation",
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown protocol {s:?} (superres, ood_beta, data_efficiency, noise, ablation)"
                ))
            })
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every protocol.
#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    pub model: ConoConfig,
    pub train: TrainConfig,
    /// Independent training runs per row; run `r` offsets both seeds by `r`.
    pub repeats: usize,
    pub split_seed: u64,
    pub noise_seed: u64,
    pub resolutions: Vec<usize>,
    pub betas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl ProtocolSpec {
    pub fn new(model: ConoConfig, train: TrainConfig) -> Self {
        Self {
            model,
            train,
            repeats: 1,
            split_seed: 0,
            noise_seed: 1,
            resolutions: vec![32, 64, 128],
            betas: vec![0.01, 1.0, 10.0, 100.0],
            fractions: vec![0.8, 0.6, 0.4, 0.2],
            gammas: vec![0.01, 0.05],
        }
    }
}

/// Base dataset plus named evaluation sets.
///
/// Extra sets are keyed by [`beta_key`] or [`resolution_key`]. An extra set
/// with as many samples as the base set is assumed to hold the same draws,
/// so only its test part is used.
#[derive(Clone, Debug)]
pub struct ProtocolData {
    pub base: GridDataset,
    pub extras: BTreeMap<String, GridDataset>,
}

pub fn beta_key(beta: f64) -> String {
    format!("beta={beta}")
}

pub fn resolution_key(n: usize) -> String {
    format!("res={n}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRow {
    pub condition: String,
    pub seed: u64,
    pub rel_l2: f64,
    pub std: f64,
    pub wall_s: f64,
    pub alphas: Vec<f64>,
    pub config_hash: String,
}

pub const CSV_HEADER: &str = "condition,seed,rel_l2,std,wall_s,alpha_x,alpha_y,config_hash";

impl ProtocolRow {
    pub fn csv_line(&self) -> String {
        let alpha = |i: usize| self.alphas.get(i).map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{:.3},{},{},{}",
            self.condition,
            self.seed,
            self.rel_l2,
            self.std,
            self.wall_s,
            alpha(0),
            alpha(1),
            self.config_hash
        )
    }
}

pub fn write_csv<W: Write>(rows: &[ProtocolRow], w: &mut W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

struct Splits {
    train: GridDataset,
    val: GridDataset,
    test: GridDataset,
}

const RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

fn splits(ds: &GridDataset, seed: u64) -> Result<Splits> {
    let (train, val, test) = split(ds, RATIOS, seed)?;
    Ok(Splits { train, val, test })
}

/// One evaluation outcome of one training run.
struct Outcome {
    rel_l2: f64,
    alphas: Vec<f64>,
}

/// Aggregates repeated runs into one row.
fn row(condition: String, spec: &ProtocolSpec, model: &ConoConfig, outcomes: &[Outcome], wall: f64) -> ProtocolRow {
    let k = outcomes.len() as f64;
    let mean = outcomes.iter().map(|o| o.rel_l2).sum::<f64>() / k;
    let var = outcomes.iter().map(|o| (o.rel_l2 - mean).powi(2)).sum::<f64>() / k;
    let dims = outcomes.first().map_or(0, |o| o.alphas.len());
    let alphas = (0..dims)
        .map(|d| outcomes.iter().map(|o| o.alphas[d]).sum::<f64>() / k)
        .collect();
    ProtocolRow {
        config_hash: config_hash(model, &spec.train, &condition),
        condition,
        seed: spec.train.seed,
        rel_l2: mean,
        std: var.sqrt(),
        wall_s: wall,
        alphas,
    }
}

fn train_run(cfg: &ConoConfig, hp: &TrainConfig, s: &Splits) -> Result<ConoModel> {
    let mut model = ConoModel::build(cfg)?;
    fit(&mut model, &s.train, &s.val, hp)?;
    Ok(model)
}

fn seeded(spec: &ProtocolSpec, r: usize) -> (ConoConfig, TrainConfig) {
    let mut cfg = spec.model.clone();
    cfg.seed = cfg.seed.wrapping_add(r as u64);
    let mut hp = spec.train.clone();
    hp.seed = hp.seed.wrapping_add(r as u64);
    (cfg, hp)
}

fn extra<'a>(data: &'a ProtocolData, key: &str) -> Result<&'a GridDataset> {
    data.extras
        .get(key)
        .ok_or_else(|| Error::MissingDataset(format!("protocol needs the dataset {key:?}")))
}

/// Evaluation part of an extra set, following the rule on [`ProtocolData`].
fn eval_part(data: &ProtocolData, ds: &GridDataset, seed: u64) -> Result<GridDataset> {
    if ds.len() == data.base.len() {
        Ok(splits(ds, seed)?.test)
    } else {
        Ok(ds.clone())
    }
}

/// Run one experiment protocol and return its rows in a fixed order.
pub fn run_protocol(kind: ProtocolKind, spec: &ProtocolSpec, data: &ProtocolData) -> Result<Vec<ProtocolRow>> {
    spec.model.validate()?;
    spec.train.validate()?;
    if spec.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let base = splits(&data.base, spec.split_seed)?;
    match kind {
        ProtocolKind::SuperRes => superres(spec, data, &base),
        ProtocolKind::OodBeta => ood_beta(spec, data, &base),
        ProtocolKind::DataEfficiency => data_efficiency(spec, &base),
        ProtocolKind::Noise => noise(spec, &base),
        ProtocolKind::Ablation => ablation(spec, &base),
    }
}

/// Trained models of every repeat, with the wall time spent.
fn train_models(spec: &ProtocolSpec, s: &Splits) -> Result<(Vec<ConoModel>, f64)> {
    let start = Instant::now();
    let models = (0..spec.repeats)
        .map(|r| {
            let (cfg, hp) = seeded(spec, r);
            train_run(&cfg, &hp, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((models, start.elapsed().as_secs_f64()))
}

fn eval_rows(
    spec: &ProtocolSpec,
    models: &[ConoModel],
    wall: f64,
    conditions: &[(String, GridDataset, Option<usize>)],
) -> Result<Vec<ProtocolRow>> {
    conditions
        .iter()
        .map(|(name, ds, res)| {
            let start = Instant::now();
            let outcomes = models
                .iter()
                .map(|m| {
                    Ok(Outcome {
                        rel_l2: evaluate(m, ds, *res)?,
                        alphas: m.alphas(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(row(name.clone(), spec, &spec.model, &outcomes, wall + start.elapsed().as_secs_f64()))
        })
        .collect()
}

/// Train `repeats` models, then evaluate each on every condition set.
fn train_then_eval(
    spec: &ProtocolSpec,
    s: &Splits,
    conditions: &[(String, GridDataset, Option<usize>)],
) -> Result<Vec<ProtocolRow>> {
    let (models, wall) = train_models(spec, s)?;
    eval_rows(spec, &models, wall, conditions)
}

fn superres(spec: &ProtocolSpec, data: &ProtocolData, base: &Splits) -> Result<Vec<ProtocolRow>> {
    let native = data.base.grid.sizes()[0];
    let mut conditions = Vec::new();
    for &r in &spec.resolutions {
        if r == native {
            conditions.push((format!("{}:native", resolution_key(r)), base.test.clone(), None));
        } else if let Some(ds) = data.extras.get(&resolution_key(r)) {
            if ds.grid.sizes().iter().any(|&s| s != r) {
                return Err(Error::Config(format!(
                    "dataset {} has grid {:?}",
                    resolution_key(r),
                    ds.grid.sizes()
                )));
            }
            conditions.push((format!("{}:native", resolution_key(r)), eval_part(data, ds, spec.split_seed)?, None));
        } else {
            conditions.push((format!("{}:resampled", resolution_key(r)), base.test.clone(), Some(r)));
        }
    }
    train_then_eval(spec, base, &conditions)
}

fn ood_beta(spec: &ProtocolSpec, data: &ProtocolData, base: &Splits) -> Result<Vec<ProtocolRow>> {
    let train_beta: f64 = data
        .base
        .meta_value("beta")
        .and_then(|b| b.parse().ok())
        .ok_or_else(|| Error::Config("base dataset does not record its beta".into()))?;
    let mut conditions = Vec::new();
    for &b in &spec.betas {
        let name = beta_key(b);
        if b == train_beta {
            conditions.push((format!("{name}:control"), base.test.clone(), None));
        } else {
            let ds = extra(data, &name)?;
            conditions.push((name, eval_part(data, ds, spec.split_seed)?, None));
        }
    }
    train_then_eval(spec, base, &conditions)
}

fn data_efficiency(spec: &ProtocolSpec, base: &Splits) -> Result<Vec<ProtocolRow>> {
    let total = base.train.len() + base.val.len() + base.test.len();
    let mut rows = Vec::new();
    for &f in &spec.fractions {
        if !(f > 0.0 && f <= RATIOS.0 + 1e-12) {
            return Err(Error::Config(format!("train fraction {f} outside (0, {}]", RATIOS.0)));
        }
        let k = ((f * total as f64).round() as usize).clamp(1, base.train.len());
        let s = Splits {
            train: base.train.with_samples(base.train.samples[..k].to_vec())?,
            val: base.val.clone(),
            test: base.test.clone(),
        };
        let conditions = [(format!("frac={f}"), base.test.clone(), None)];
        rows.extend(train_then_eval(spec, &s, &conditions)?);
    }
    Ok(rows)
}

fn noise(spec: &ProtocolSpec, base: &Splits) -> Result<Vec<ProtocolRow>> {
    let noisy = |ds: &GridDataset, g: f64, salt: u64| add_noise(ds, g, spec.noise_seed.wrapping_add(salt), NoiseTarget::Inputs);
    if let Some(g) = spec.gammas.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::Config(format!("noise level {g} must be >= 0")));
    }
    let (clean_models, clean_wall) = train_models(spec, base)?;
    let mut rows = Vec::new();
    for &g in &spec.gammas {
        let tag = format!("g={g}");
        let noisy_test = noisy(&base.test, g, 2)?;
        let noisy_splits = Splits {
            train: noisy(&base.train, g, 0)?,
            val: noisy(&base.val, g, 1)?,
            test: base.test.clone(),
        };
        let (noisy_models, noisy_wall) = train_models(spec, &noisy_splits)?;
        let clean = eval_rows(
            spec,
            &clean_models,
            clean_wall,
            &[
                (format!("clean:{tag}"), base.test.clone(), None),
                (format!("test_noisy:{tag}"), noisy_test.clone(), None),
            ],
        )?;
        let trained_noisy = eval_rows(
            spec,
            &noisy_models,
            noisy_wall,
            &[
                (format!("train_noisy:{tag}"), base.test.clone(), None),
                (format!("both:{tag}"), noisy_test, None),
            ],
        )?;
        rows.push(clean[0].clone());
        rows.push(trained_noisy[0].clone());
        rows.push(clean[1].clone());
        rows.push(trained_noisy[1].clone());
    }
    Ok(rows)
}

fn ablation(spec: &ProtocolSpec, base: &Splits) -> Result<Vec<ProtocolRow>> {
    let mut rows = Vec::new();
    for a in Ablation::ALL {
        let mut s = spec.clone();
        s.model.ablation = a;
        if a == Ablation::Vanilla {
            s.model.n_spectral_blocks = 1;
        }
        let r = train_then_eval(&s, base, &[(a.name().to_string(), base.test.clone(), None)])?;
        rows.extend(r);
    }
    Ok(rows)
}
