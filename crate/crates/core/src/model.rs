//! The complex fractional operator network: P → Q → R → blocks → R′ → Q′ → Re → P′.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    add, affine_channels, concat_channels, real_part, relative_l2_node, NodeId, ParamStore, Tape,
};
use crate::ctensor::{ComplexTensor, GridSpec, C64};
use crate::error::{Error, Result};
use crate::layers::activation::cgelu_node;
use crate::layers::{Activation, ComplexConv, ComplexUnet, ConvSpec, KernelIntegral, SpectralBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    /// One spectral layer, order frozen at 1, no UNET branch.
    Vanilla,
    /// Orders frozen at 1.
    Fourier,
    /// Pointwise activation instead of the alias-free wrapper.
    NoAlias,
    /// W and UNET branches removed.
    NoBias,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::Vanilla,
        Ablation::Fourier,
        Ablation::NoAlias,
        Ablation::NoBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Vanilla => "vanilla",
            Ablation::Fourier => "fourier",
            Ablation::NoAlias => "no_alias",
            Ablation::NoBias => "no_bias",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?} (full, vanilla, fourier, no_alias, no_bias)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConoConfig {
    pub spatial_dims: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Width of the real lifting and projection MLPs.
    pub lift_dim: usize,
    /// Width of the complex stages.
    pub complex_dim: usize,
    pub n_spectral_blocks: usize,
    /// Retained transform bins per spatial dimension.
    pub modes: Vec<usize>,
    pub unet_levels: usize,
    pub alpha_init: Vec<f64>,
    pub ablation: Ablation,
    /// Append normalized grid coordinates to the input channels.
    pub grid_channels: bool,
    /// Grid the fractional transform is defined on. Inputs on other grids are
    /// transferred to it band-limited; `None` transforms on the input grid.
    pub transform_grid: Option<Vec<usize>>,
    pub seed: u64,
}

impl ConoConfig {
    /// Defaults: 16 modes in 1-d, 12 per dimension in 2-d.
    pub fn new(spatial_dims: usize, in_channels: usize, out_channels: usize) -> Self {
        let m = if spatial_dims == 1 { 16 } else { 12 };
        Self {
            spatial_dims,
            in_channels,
            out_channels,
            lift_dim: 32,
            complex_dim: 16,
            n_spectral_blocks: 1,
            modes: vec![m; spatial_dims],
            unet_levels: 2,
            alpha_init: vec![1.0; spatial_dims],
            ablation: Ablation::Full,
            grid_channels: true,
            transform_grid: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.spatial_dims) {
            return fail(format!("spatial_dims must be 1 or 2, got {}", self.spatial_dims));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.complex_dim == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.lift_dim < self.in_channels {
            return fail(format!("lift_dim {} < in_channels {}", self.lift_dim, self.in_channels));
        }
        if self.modes.len() != self.spatial_dims || self.modes.contains(&0) {
            return fail(format!("modes {:?} for {} spatial dims", self.modes, self.spatial_dims));
        }
        if self.alpha_init.len() != self.spatial_dims || self.alpha_init.iter().any(|a| !a.is_finite()) {
            return fail(format!("alpha_init {:?} for {} spatial dims", self.alpha_init, self.spatial_dims));
        }
        if self.n_spectral_blocks == 0 {
            return fail("n_spectral_blocks must be at least 1".into());
        }
        if self.unet_levels > 6 {
            return fail(format!("unet_levels {} too deep", self.unet_levels));
        }
        if let Some(g) = &self.transform_grid {
            if g.len() != self.spatial_dims || g.iter().zip(&self.modes).any(|(&n, &m)| n < 4 || n < m) {
                return fail(format!("transform_grid {g:?} for modes {:?}", self.modes));
            }
        }
        Ok(())
    }

    fn has_unet(&self) -> bool {
        self.unet_levels > 0 && !matches!(self.ablation, Ablation::Vanilla | Ablation::NoBias)
    }

    fn frozen_orders(&self) -> bool {
        matches!(self.ablation, Ablation::Vanilla | Ablation::Fourier)
    }

    /// Line-oriented `key = value` text, stable across runs.
    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let modes: Vec<String> = self.modes.iter().map(|m| m.to_string()).collect();
        let alphas: Vec<String> = self.alpha_init.iter().map(|a| format!("{a:?}")).collect();
        format!(
            "spatial_dims = {}\nin_channels = {}\nout_channels = {}\nlift_dim = {}\ncomplex_dim = {}\n\
             n_spectral_blocks = {}\nmodes = {}\nunet_levels = {}\nalpha_init = {}\nablation = {}\n\
             grid_channels = {}\ntransform_grid = {}\nseed = {}\n",
            self.spatial_dims,
            self.in_channels,
            self.out_channels,
            self.lift_dim,
            self.complex_dim,
            self.n_spectral_blocks,
            join(&modes),
            self.unet_levels,
            join(&alphas),
            self.ablation,
            self.grid_channels,
            match &self.transform_grid {
                Some(g) => join(&g.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
                None => "native".to_string(),
            },
            self.seed,
        )
    }

    /// Set one field from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|p| num(key, p)).collect()
        }
        match key {
            "spatial_dims" => self.spatial_dims = num(key, value)?,
            "in_channels" => self.in_channels = num(key, value)?,
            "out_channels" => self.out_channels = num(key, value)?,
            "lift_dim" => self.lift_dim = num(key, value)?,
            "complex_dim" => self.complex_dim = num(key, value)?,
            "n_spectral_blocks" => self.n_spectral_blocks = num(key, value)?,
            "modes" => self.modes = list(key, value)?,
            "unet_levels" => self.unet_levels = num(key, value)?,
            "alpha_init" => self.alpha_init = list(key, value)?,
            "ablation" => self.ablation = value.trim().parse()?,
            "grid_channels" => self.grid_channels = num(key, value)?,
            "transform_grid" => {
                self.transform_grid = match value.trim() {
                    "native" => None,
                    v => Some(list(key, v)?),
                }
            }
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ConoConfig::new(1, 1, 1);
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((i, line))
        })
        .map(|(i, line)| {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Per-channel scalar shift and scale applied to inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(c_in: usize, c_out: usize) -> Self {
        Self {
            in_mean: vec![0.0; c_in],
            in_std: vec![1.0; c_in],
            out_mean: vec![0.0; c_out],
            out_std: vec![1.0; c_out],
        }
    }

    /// Channel statistics over every sample and grid point.
    pub fn fit(inputs: &[&ComplexTensor], outputs: &[&ComplexTensor]) -> Result<Self> {
        fn stats(fields: &[&ComplexTensor]) -> Result<(Vec<f64>, Vec<f64>)> {
            let first = fields
                .first()
                .ok_or_else(|| Error::InvalidArgument("normalizer needs at least one sample".into()))?;
            let c = first.channels();
            let mut mean = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut count = 0.0;
            for f in fields {
                for (ch, (m, s)) in mean.iter_mut().zip(sq.iter_mut()).enumerate() {
                    for v in f.channel(ch) {
                        *m += v.re;
                        *s += v.re * v.re;
                    }
                }
                count += f.spatial_len() as f64;
            }
            let std = mean
                .iter_mut()
                .zip(&sq)
                .map(|(m, s)| {
                    *m /= count;
                    let var = (s / count - *m * *m).max(0.0);
                    // constant channels keep unit scale
                    if var.sqrt() > 1e-12 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            Ok((mean, std))
        }
        let (in_mean, in_std) = stats(inputs)?;
        let (out_mean, out_std) = stats(outputs)?;
        Ok(Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        })
    }
}

/// `v + act(conv3(v))`, with a 1×1 projection on the skip when widths differ.
#[derive(Clone, Debug)]
struct ResidualConv {
    conv: ComplexConv,
    skip: Option<ComplexConv>,
}

impl ResidualConv {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, dims: usize, real: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = |c_in, c_out, kernel| ConvSpec {
            c_in,
            c_out,
            kernel,
            spatial_dims: dims,
            bias: true,
            real,
        };
        let conv = ComplexConv::new(store, &format!("{name}.conv"), spec(c_in, c_out, 3), rng)?;
        let skip = (c_in != c_out)
            .then(|| ComplexConv::new(store, &format!("{name}.skip"), spec(c_in, c_out, 1), rng))
            .transpose()?;
        Ok(Self { conv, skip })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, act: &Activation, x: NodeId) -> Result<NodeId> {
        let h = self.conv.forward(tape, store, x)?;
        let h = act.node(tape, h)?;
        let s = match &self.skip {
            Some(skip) => skip.forward(tape, store, x)?,
            None => x,
        };
        add(tape, s, h)
    }
}

/// Two pointwise real layers with GeLU in between.
#[derive(Clone, Debug)]
struct Mlp {
    first: ComplexConv,
    second: ComplexConv,
}

impl Mlp {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, hidden: usize, c_out: usize, dims: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = |c_in, c_out| ConvSpec {
            c_in,
            c_out,
            kernel: 1,
            spatial_dims: dims,
            bias: true,
            real: true,
        };
        Ok(Self {
            first: ComplexConv::new(store, &format!("{name}.0"), spec(c_in, hidden), rng)?,
            second: ComplexConv::new(store, &format!("{name}.1"), spec(hidden, c_out), rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.first.forward(tape, store, x)?;
        let h = cgelu_node(tape, h)?;
        self.second.forward(tape, store, h)
    }
}

#[derive(Clone, Debug)]
pub struct ConoModel {
    pub config: ConoConfig,
    pub store: ParamStore,
    pub normalizer: Normalizer,
    activation: Activation,
    lift: Mlp,
    q: ResidualConv,
    r: ComplexConv,
    blocks: Vec<SpectralBlock>,
    r_out: ComplexConv,
    q_out: ResidualConv,
    project: Mlp,
}

const CKPT_MAGIC: &[u8; 4] = b"CONO";
const CKPT_VERSION: u32 = 1;

impl ConoModel {
    pub fn build(config: &ConoConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let dims = cfg.spatial_dims;
        let d = cfg.complex_dim;
        let c_in = cfg.in_channels + if cfg.grid_channels { dims } else { 0 };
        let lift = Mlp::new(&mut store, "lift", c_in, cfg.lift_dim, cfg.lift_dim, dims, &mut rng)?;
        let q = ResidualConv::new(&mut store, "q", cfg.lift_dim, d, dims, true, &mut rng)?;
        let pointwise = |c_in, c_out| ConvSpec {
            c_in,
            c_out,
            kernel: 1,
            spatial_dims: dims,
            bias: true,
            real: false,
        };
        let r = ComplexConv::new(&mut store, "r", pointwise(d, d), &mut rng)?;
        let n_blocks = if cfg.ablation == Ablation::Vanilla { 1 } else { cfg.n_spectral_blocks };
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let name = format!("block{b}");
            let alpha_init = if cfg.frozen_orders() { vec![1.0; dims] } else { cfg.alpha_init.clone() };
            let mut kernel = KernelIntegral::new(&mut store, &format!("{name}.k"), d, &cfg.modes, &alpha_init, &mut rng)?;
            kernel.reference = cfg.transform_grid.clone();
            if cfg.frozen_orders() {
                for &a in &kernel.alphas {
                    store.set_frozen(a, true);
                }
            }
            let pointwise = (cfg.ablation != Ablation::NoBias)
                .then(|| ComplexConv::new(&mut store, &format!("{name}.w"), pointwise(d, d), &mut rng))
                .transpose()?;
            let unet = cfg
                .has_unet()
                .then(|| ComplexUnet::new(&mut store, &format!("{name}.unet"), d, cfg.unet_levels, dims, &mut rng))
                .transpose()?;
            blocks.push(SpectralBlock { pointwise, kernel, unet });
        }
        let r_out = ComplexConv::new(&mut store, "r_out", pointwise(d, d), &mut rng)?;
        let q_out = ResidualConv::new(&mut store, "q_out", d, d, dims, false, &mut rng)?;
        let project = Mlp::new(&mut store, "project", d, cfg.lift_dim, cfg.out_channels, dims, &mut rng)?;
        let activation = if cfg.ablation == Ablation::NoAlias {
            Activation::Pointwise
        } else {
            Activation::alias_free()
        };
        Ok(Self {
            normalizer: Normalizer::identity(cfg.in_channels, cfg.out_channels),
            config: cfg,
            store,
            activation,
            lift,
            q,
            r,
            blocks,
            r_out,
            q_out,
            project,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.total_numel()
    }

    pub fn blocks(&self) -> &[SpectralBlock] {
        &self.blocks
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    /// Define the fractional transform on `grid` from now on.
    pub fn set_transform_grid(&mut self, grid: Option<Vec<usize>>) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.transform_grid = grid;
        cfg.validate()?;
        for b in &mut self.blocks {
            b.kernel.reference = cfg.transform_grid.clone();
        }
        self.config = cfg;
        Ok(())
    }

    /// Current orders of the first spectral block.
    pub fn alphas(&self) -> Vec<f64> {
        self.blocks[0].kernel.alpha_values(&self.store)
    }

    pub fn check_input(&self, x: &ComplexTensor) -> Result<()> {
        let cfg = &self.config;
        if x.ndim() != cfg.spatial_dims + 1 || x.channels() != cfg.in_channels {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected [{}, {}-d grid], got {:?}",
                    cfg.in_channels,
                    cfg.spatial_dims,
                    x.shape()
                ),
            ));
        }
        if x.max_abs_imag() != 0.0 {
            return Err(Error::InvalidArgument("model inputs must be real".into()));
        }
        for (&n, &m) in x.spatial().iter().zip(&cfg.modes) {
            if m > n {
                return Err(Error::InvalidArgument(format!("{m} modes exceed grid extent {n}")));
            }
        }
        Ok(())
    }

    fn grid_field(&self, spatial: &[usize]) -> Result<ComplexTensor> {
        let grid = GridSpec::new(spatial.to_vec())?;
        let n: usize = spatial.iter().product();
        let mut data = Vec::with_capacity(n * spatial.len());
        for d in 0..spatial.len() {
            let c = grid.coords(d);
            let inner: usize = spatial[d + 1..].iter().product();
            for idx in 0..n {
                data.push(C64::new(c[(idx / inner) % spatial[d]], 0.0));
            }
        }
        let mut shape = vec![spatial.len()];
        shape.extend_from_slice(spatial);
        ComplexTensor::new(shape, data)
    }

    /// Record the full forward pass for one sample `[C_in, spatial…]`.
    pub fn forward(&self, tape: &mut Tape, x: &ComplexTensor) -> Result<NodeId> {
        self.check_input(x)?;
        let (store, act, norm) = (&self.store, &self.activation, &self.normalizer);
        let input = tape.constant(x.clone());
        let scale: Vec<f64> = norm.in_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = norm.in_mean.iter().zip(&norm.in_std).map(|(m, s)| -m / s).collect();
        let mut v = affine_channels(tape, input, &scale, &shift)?;
        if self.config.grid_channels {
            let g = tape.constant(self.grid_field(x.spatial())?);
            v = concat_channels(tape, &[v, g])?;
        }
        v = self.lift.forward(tape, store, v)?;
        v = self.q.forward(tape, store, act, v)?;
        v = self.r.forward(tape, store, v)?;
        for block in &self.blocks {
            v = block.forward(tape, store, act, v)?;
        }
        v = self.r_out.forward(tape, store, v)?;
        v = self.q_out.forward(tape, store, act, v)?;
        v = real_part(tape, v)?;
        v = self.project.forward(tape, store, v)?;
        affine_channels(tape, v, &norm.out_std, &norm.out_mean)
    }

    pub fn predict(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    /// Squared relative error of one sample and its parameter gradients.
    pub fn loss_and_grads(&self, x: &ComplexTensor, target: &ComplexTensor, weight: f64) -> Result<(f64, Vec<ComplexTensor>)> {
        let mut tape = Tape::new();
        let pred = self.forward(&mut tape, x)?;
        let loss = relative_l2_node(&mut tape, pred, target)?;
        let value = tape.value(loss).data()[0].re;
        let grads = tape.backward(loss)?.param_grads(&tape, &self.store);
        let grads = if weight == 1.0 {
            grads
        } else {
            grads.into_iter().map(|g| g.scale(C64::new(weight, 0.0))).collect()
        };
        Ok((value, grads))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        let text = self.config.to_text();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let norm = &self.normalizer;
        let extra = [
            ("normalizer.in_mean", &norm.in_mean),
            ("normalizer.in_std", &norm.in_std),
            ("normalizer.out_mean", &norm.out_mean),
            ("normalizer.out_std", &norm.out_std),
        ];
        w.write_all(&((self.store.len() + extra.len()) as u32).to_le_bytes())?;
        let mut record = |name: &str, t: &ComplexTensor| -> Result<()> {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for z in t.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
            Ok(())
        };
        for p in self.store.iter() {
            record(&p.name, &p.value)?;
        }
        for (name, values) in extra {
            record(name, &ComplexTensor::from_real(vec![values.len()], values)?)?;
        }
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::read_checkpoint(&mut BufReader::new(File::open(path)?), None)
    }

    /// Load, failing unless the stored config equals `expected`.
    pub fn load_checkpoint_expecting(path: &Path, expected: &ConoConfig) -> Result<Self> {
        Self::read_checkpoint(&mut BufReader::new(File::open(path)?), Some(expected))
    }

    pub fn read_checkpoint<R: Read>(r: &mut R, expected: Option<&ConoConfig>) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let text = read_string(r, 1 << 20)?;
        let config = ConoConfig::from_text(&text)?;
        if let Some(exp) = expected {
            if exp != &config {
                return Err(Error::Config(format!(
                    "checkpoint config differs from the requested one:\n{}---\n{}",
                    config.to_text(),
                    exp.to_text()
                )));
            }
        }
        let mut model = Self::build(&config)?;
        let n = read_u32(r)? as usize;
        let mut seen = vec![false; model.store.len()];
        let mut norm = model.normalizer.clone();
        for _ in 0..n {
            let name = read_string(r, 4096)?;
            let ndim = read_u32(r)? as usize;
            if ndim > 8 {
                return Err(Error::Format(format!("record {name}: {ndim} dims")));
            }
            let shape = (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            if len > 1 << 28 {
                return Err(Error::Format(format!("record {name}: implausible size {shape:?}")));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(C64::new(read_f64(r)?, read_f64(r)?));
            }
            let t = ComplexTensor::new(shape, data)?;
            if let Some(field) = name.strip_prefix("normalizer.") {
                let values = t.re_values();
                let slot = match field {
                    "in_mean" => &mut norm.in_mean,
                    "in_std" => &mut norm.in_std,
                    "out_mean" => &mut norm.out_mean,
                    "out_std" => &mut norm.out_std,
                    _ => return Err(Error::Format(format!("unknown record {name}"))),
                };
                if values.len() != slot.len() {
                    return Err(Error::Format(format!("record {name}: {} values, expected {}", values.len(), slot.len())));
                }
                *slot = values;
                continue;
            }
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint has unknown parameter {name}")))?;
            if model.store.get(id).value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    model.store.get(id).value.shape()
                )));
            }
            *model.store.value_mut(id) = t;
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "checkpoint lacks parameter {}",
                model.store.get(missing).name
            )));
        }
        model.normalizer = norm;
        Ok(model)
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("file is truncated".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_string<R: Read>(r: &mut R, max: usize) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > max {
        return Err(Error::Format(format!("string of {len} bytes exceeds {max}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("text is not UTF-8".into()))
}
