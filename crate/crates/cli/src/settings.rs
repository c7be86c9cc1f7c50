//! `key = value` settings shared by every subcommand.
//!
//! Defaults are overridden by the config file, which is overridden by flags.

use std::path::Path;

use cono::model::{parse_key_values, ConoConfig};
use cono::train::{ProtocolSpec, TrainConfig};
use cono::{Error, Result};

const MODEL_KEYS: &[&str] = &[
    "lift_dim",
    "complex_dim",
    "n_spectral_blocks",
    "modes",
    "unet_levels",
    "alpha_init",
    "ablation",
    "grid_channels",
    "transform_grid",
];
const TRAIN_KEYS: &[&str] = &["lr", "epochs", "batch", "weight_decay", "schedule"];

#[derive(Clone, Debug)]
pub struct Settings {
    /// Model keys are kept as text until the data fixes the dimension.
    model: Vec<(String, String)>,
    pub train: TrainConfig,
    pub seed: u64,
    pub split_seed: u64,
    pub noise_seed: u64,
    pub repeats: usize,
    pub resolutions: Vec<usize>,
    pub betas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub gammas: Vec<f64>,
    pub n: usize,
    pub nx: Option<usize>,
    pub nu: f64,
    pub beta: f64,
    pub dt_out: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let p = ProtocolSpec::new(ConoConfig::new(1, 1, 1), TrainConfig::default());
        Self {
            model: Vec::new(),
            train: TrainConfig::default(),
            seed: 0,
            split_seed: p.split_seed,
            noise_seed: p.noise_seed,
            repeats: p.repeats,
            resolutions: p.resolutions,
            betas: p.betas,
            fractions: p.fractions,
            gammas: p.gammas,
            n: 64,
            nx: None,
            nu: 0.1,
            beta: 1.0,
            dt_out: 0.1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let out: Vec<T> = v.split(',').map(|p| num(key, p)).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(out)
}

impl Settings {
    /// Defaults, then `file`, then `flags` in order.
    pub fn load(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_key_values(&text)? {
                s.set(&k, &v)?;
            }
        }
        for (k, v) in flags {
            s.set(k, v)?;
        }
        s.train.validate()?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if MODEL_KEYS.contains(&key) {
            // parse now so bad values fail before any work starts
            ConoConfig::new(1, 1, 1).set(key, value)?;
            self.model.push((key.to_string(), value.to_string()));
            return Ok(());
        }
        if TRAIN_KEYS.contains(&key) {
            return self.train.set(key, value);
        }
        match key {
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
            }
            "split_seed" => self.split_seed = num(key, value)?,
            "noise_seed" => self.noise_seed = num(key, value)?,
            "repeats" => self.repeats = num(key, value)?,
            "resolutions" => self.resolutions = list(key, value)?,
            "betas" => self.betas = list(key, value)?,
            "fractions" => self.fractions = list(key, value)?,
            "gammas" => self.gammas = list(key, value)?,
            "n" => self.n = num(key, value)?,
            "nx" => self.nx = Some(num(key, value)?),
            "nu" => self.nu = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "dt_out" => self.dt_out = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Model configuration for data of the given shape. A single value for
    /// `modes` or `alpha_init` applies to every dimension.
    pub fn model_for(&self, dims: usize, c_in: usize, c_out: usize) -> Result<ConoConfig> {
        let mut cfg = ConoConfig::new(dims, c_in, c_out);
        for (k, v) in &self.model {
            let v = match k.as_str() {
                "modes" | "alpha_init" | "transform_grid" if !v.contains(',') && v != "native" => {
                    vec![v.as_str(); dims].join(",")
                }
                _ => v.clone(),
            };
            cfg.set(k, &v)?;
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn protocol(&self, model: ConoConfig) -> ProtocolSpec {
        let mut p = ProtocolSpec::new(model, self.train.clone());
        p.repeats = self.repeats;
        p.split_seed = self.split_seed;
        p.noise_seed = self.noise_seed;
        p.resolutions = self.resolutions.clone();
        p.betas = self.betas.clone();
        p.fractions = self.fractions.clone();
        p.gammas = self.gammas.clone();
        p
    }
}
