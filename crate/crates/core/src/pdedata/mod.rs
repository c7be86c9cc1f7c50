//! PDE datasets on periodic grids: generation, perturbation, splitting and storage.

mod burgers;
mod darcy;
mod grf;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ctensor::{fft_axis, ComplexTensor, GridSpec, C64, ZERO};
use crate::error::{Error, Result};
use crate::model::{read_exact, read_u32};

pub use burgers::BurgersSolver;
pub use darcy::DarcySystem;
pub use grf::GaussianRandomField;

pub const GFD_MAGIC: &[u8; 4] = b"GFD1";
const GFD_VERSION: u32 = 1;
const GFD_DTYPE_F64: u8 = 1;
const MAX_META: usize = 1 << 20;

/// Relative residual the Darcy solver drives to.
pub const DARCY_TOL: f64 = 1e-12;

/// One input/output pair of real fields, channels first.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample {
    pub input: ComplexTensor,
    pub output: ComplexTensor,
}

impl GridSample {
    /// Rejects non-finite values and nonzero imaginary parts.
    pub fn new(input: ComplexTensor, output: ComplexTensor) -> Result<Self> {
        for (t, what) in [(&input, "input"), (&output, "output")] {
            if !t.is_finite() {
                return Err(Error::Numerical(format!("sample {what} has non-finite values")));
            }
            if t.max_abs_imag() != 0.0 {
                return Err(Error::InvalidArgument(format!("sample {what} is not real")));
            }
        }
        if input.spatial() != output.spatial() {
            return Err(Error::shape(
                "sample",
                format!("input grid {:?} vs output grid {:?}", input.spatial(), output.spatial()),
            ));
        }
        Ok(Self { input, output })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDataset {
    pub grid: GridSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub samples: Vec<GridSample>,
    pub meta: BTreeMap<String, String>,
}

impl GridDataset {
    pub fn new(grid: GridSpec, c_in: usize, c_out: usize) -> Self {
        Self {
            grid,
            c_in,
            c_out,
            samples: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn input_shape(&self) -> Vec<usize> {
        std::iter::once(self.c_in).chain(self.grid.sizes().iter().copied()).collect()
    }

    fn output_shape(&self) -> Vec<usize> {
        std::iter::once(self.c_out).chain(self.grid.sizes().iter().copied()).collect()
    }

    pub fn push(&mut self, sample: GridSample) -> Result<()> {
        if sample.input.shape() != self.input_shape().as_slice()
            || sample.output.shape() != self.output_shape().as_slice()
        {
            return Err(Error::shape(
                "dataset",
                format!(
                    "sample {:?} -> {:?} in a dataset of {:?} -> {:?}",
                    sample.input.shape(),
                    sample.output.shape(),
                    self.input_shape(),
                    self.output_shape()
                ),
            ));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn with_samples(&self, samples: Vec<GridSample>) -> Result<Self> {
        let mut out = Self {
            samples: Vec::with_capacity(samples.len()),
            ..Self::new(self.grid.clone(), self.c_in, self.c_out)
        };
        out.meta = self.meta.clone();
        for s in samples {
            out.push(s)?;
        }
        Ok(out)
    }

    pub fn inputs(&self) -> Vec<&ComplexTensor> {
        self.samples.iter().map(|s| &s.input).collect()
    }

    pub fn outputs(&self) -> Vec<&ComplexTensor> {
        self.samples.iter().map(|s| &s.output).collect()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    fn meta_text(&self) -> String {
        self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Standard deviation pooled over every input value of the dataset.
pub fn sigma_d(ds: &GridDataset) -> f64 {
    let count: usize = ds.samples.iter().map(|s| s.input.len()).sum();
    if count == 0 {
        return 0.0;
    }
    let mean = ds.samples.iter().flat_map(|s| s.input.data()).map(|v| v.re).sum::<f64>() / count as f64;
    let var = ds
        .samples
        .iter()
        .flat_map(|s| s.input.data())
        .map(|v| (v.re - mean).powi(2))
        .sum::<f64>()
        / count as f64;
    var.sqrt()
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Which side of each pair receives noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseTarget {
    Inputs,
    Outputs,
}

/// Additive Gaussian noise with standard deviation `gamma·σ_D`.
///
/// `σ_D` is pooled over the targeted fields of the whole dataset.
pub fn add_noise(ds: &GridDataset, gamma: f64, seed: u64, target: NoiseTarget) -> Result<GridDataset> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(ds.clone());
    }
    let sigma = match target {
        NoiseTarget::Inputs => sigma_d(ds),
        NoiseTarget::Outputs => {
            let swapped = GridDataset {
                samples: ds
                    .samples
                    .iter()
                    .map(|s| GridSample {
                        input: s.output.clone(),
                        output: s.input.clone(),
                    })
                    .collect(),
                ..GridDataset::new(ds.grid.clone(), ds.c_out, ds.c_in)
            };
            sigma_d(&swapped)
        }
    };
    let std = gamma * sigma;
    let samples: Vec<GridSample> = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sample_rng(seed, i);
            let mut s = s.clone();
            let field = match target {
                NoiseTarget::Inputs => &mut s.input,
                NoiseTarget::Outputs => &mut s.output,
            };
            for v in field.data_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                v.re += std * e;
            }
            s
        })
        .collect();
    let mut out = ds.with_samples(samples)?;
    let key = match target {
        NoiseTarget::Inputs => "noise_inputs",
        NoiseTarget::Outputs => "noise_outputs",
    };
    out.meta.insert(key.into(), format!("gamma={gamma} sigma_d={sigma} seed={seed}"));
    Ok(out)
}

/// Seeded shuffle into train/validation/test parts.
///
/// Part sizes are `round(r0·n)`, `round(r1·n)` and the remainder.
pub fn split(ds: &GridDataset, ratios: (f64, f64, f64), seed: u64) -> Result<(GridDataset, GridDataset, GridDataset)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let n = ds.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = ((b * n as f64).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(format!(
            "split of {n} samples gives an empty part ({n_train}, {n_val}, {n_test})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: &[usize]| -> Result<GridDataset> {
        let mut sorted = range.to_vec();
        sorted.sort_unstable();
        ds.with_samples(sorted.iter().map(|&i| ds.samples[i].clone()).collect())
    };
    Ok((
        pick(&idx[..n_train])?,
        pick(&idx[n_train..n_train + n_val])?,
        pick(&idx[n_train + n_val..])?,
    ))
}

/// Same split, but returning the sample indices of each part.
pub fn split_indices(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let grid = GridSpec::new(vec![4])?;
    let mut probe = GridDataset::new(grid, 1, 1);
    for i in 0..n {
        let t = ComplexTensor::filled(&[1, 4], C64::new(i as f64, 0.0));
        probe.samples.push(GridSample {
            input: t.clone(),
            output: t,
        });
    }
    let (a, b, c) = split(&probe, ratios, seed)?;
    let ids = |d: &GridDataset| d.samples.iter().map(|s| s.input.data()[0].re as usize).collect();
    Ok((ids(&a), ids(&b), ids(&c)))
}

/// Band-limited resampling of one axis from `n` to `m` points.
fn resample_axis(x: &ComplexTensor, axis: usize, m: usize) -> Result<ComplexTensor> {
    let shape = x.shape().to_vec();
    let n = shape[axis];
    if n == m {
        return Ok(x.clone());
    }
    let spec = fft_axis(x, axis, false);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut new_shape = shape.clone();
    new_shape[axis] = m;
    let mut out_spec = vec![ZERO; outer * m * inner];
    // map standard-order frequency f to its index in an l-point FFT
    let idx = |f: i64, l: usize| f.rem_euclid(l as i64) as usize;
    let small = n.min(m);
    let half = (small / 2) as i64;
    for o in 0..outer {
        for i in 0..inner {
            let get = |f: i64| spec.data()[(o * n + idx(f, n)) * inner + i];
            let mut put = |f: i64, v: C64| out_spec[(o * m + idx(f, m)) * inner + i] += v;
            for f in -half..=half {
                if small % 2 == 0 && f.abs() == half {
                    continue;
                }
                put(f, get(f));
            }
            if small % 2 == 0 {
                if m < n {
                    // fold both ±half bins into the new Nyquist bin
                    put(half, get(half) + get(-half));
                } else {
                    // split the old Nyquist bin evenly between ±half
                    let v = get(half) * 0.5;
                    put(half, v);
                    put(-half, v);
                }
            }
        }
    }
    let out_spec = ComplexTensor::new(new_shape, out_spec)?;
    let scale = 1.0 / n as f64;
    Ok(fft_axis(&out_spec, axis, true).map(|v| C64::new(v.re * scale, 0.0)))
}

/// Spectral resampling of a real field `[C, spatial...]` to new sizes.
pub fn resample_field(x: &ComplexTensor, sizes: &[usize]) -> Result<ComplexTensor> {
    if sizes.len() != x.spatial().len() {
        return Err(Error::shape("resample", format!("{sizes:?} for a field of {:?}", x.shape())));
    }
    let mut y = x.clone();
    for (d, &m) in sizes.iter().enumerate() {
        y = resample_axis(&y, d + 1, m)?;
    }
    Ok(y)
}

/// Resample every field of the dataset to `new_size` points per dimension.
pub fn resample(ds: &GridDataset, new_size: usize) -> Result<GridDataset> {
    if new_size < 4 {
        return Err(Error::InvalidArgument(format!("resample target {new_size} < 4")));
    }
    let sizes = vec![new_size; ds.grid.spatial_dims()];
    let grid = GridSpec::new(sizes.clone())?;
    let samples: Result<Vec<GridSample>> = ds
        .samples
        .par_iter()
        .map(|s| {
            Ok(GridSample {
                input: resample_field(&s.input, &sizes)?,
                output: resample_field(&s.output, &sizes)?,
            })
        })
        .collect();
    let mut out = GridDataset::new(grid, ds.c_in, ds.c_out);
    out.meta = ds.meta.clone();
    out.meta.insert("resampled_from".into(), format!("{:?}", ds.grid.sizes()));
    for s in samples? {
        out.push(s)?;
    }
    Ok(out)
}

/// Default distribution of Burgers initial conditions.
pub fn burgers_ic_field() -> GaussianRandomField {
    GaussianRandomField {
        tau: 2.5,
        sigma: 1.0,
        kmax: 16,
        mean: 0.0,
    }
}

/// Default field thresholded into the Darcy conductivity.
pub fn darcy_coefficient_field() -> GaussianRandomField {
    GaussianRandomField {
        tau: 2.0,
        sigma: 1.0,
        kmax: 8,
        mean: 0.0,
    }
}

/// Two-level conductivity from the sign of a random field.
#[derive(Clone, Debug, PartialEq)]
pub struct DarcyCoefficient {
    pub field: GaussianRandomField,
    pub low: f64,
    pub high: f64,
}

impl Default for DarcyCoefficient {
    fn default() -> Self {
        Self {
            field: darcy_coefficient_field(),
            low: 3.0,
            high: 12.0,
        }
    }
}

impl DarcyCoefficient {
    pub fn sample(&self, n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
        let g = self.field.sample(&[n, n], seed, stream)?;
        Ok(g.iter().map(|&v| if v >= 0.0 { self.high } else { self.low }).collect())
    }
}

/// Burgers pairs `(u0, u(dt_out))` with default initial conditions.
pub fn gen_burgers(n_samples: usize, nx: usize, nu: f64, dt_out: f64, seed: u64) -> Result<GridDataset> {
    gen_burgers_with(&burgers_ic_field(), n_samples, nx, nu, dt_out, seed)
}

pub fn gen_burgers_with(
    ic: &GaussianRandomField,
    n_samples: usize,
    nx: usize,
    nu: f64,
    dt_out: f64,
    seed: u64,
) -> Result<GridDataset> {
    if !nx.is_power_of_two() || nx < 4 {
        return Err(Error::InvalidArgument(format!("Burgers grid must be a power of two >= 4, got {nx}")));
    }
    if !(dt_out > 0.0 && dt_out.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt_out must be positive, got {dt_out}")));
    }
    let solver = BurgersSolver::new(nx, nu)?;
    let grid = GridSpec::new(vec![nx])?;
    let samples: Result<Vec<GridSample>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let u0 = ic.sample(&[nx], seed, i as u64)?;
            let u1 = solver.solve(&u0, dt_out).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("Burgers sample {i}: {msg}")),
                other => other,
            })?;
            GridSample::new(
                ComplexTensor::from_real(vec![1, nx], &u0)?,
                ComplexTensor::from_real(vec![1, nx], &u1)?,
            )
        })
        .collect();
    let mut ds = GridDataset::new(grid, 1, 1);
    for s in samples? {
        ds.push(s)?;
    }
    let meta = [
        ("pde", "burgers".to_string()),
        ("nu", nu.to_string()),
        ("dt_out", dt_out.to_string()),
        ("seed", seed.to_string()),
        ("ic_tau", ic.tau.to_string()),
        ("ic_sigma", ic.sigma.to_string()),
        ("ic_kmax", ic.kmax.to_string()),
        ("solver", format!("pseudo-spectral 2/3 dealiasing, adaptive RK4 safety {}", solver.safety)),
    ];
    ds.meta = meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(ds)
}

/// Solve `−∇·(a∇u) = f` for a full-grid coefficient and forcing; returns the full-grid solution.
pub fn solve_darcy(n: usize, a: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
    let system = DarcySystem::new(n, a)?;
    if forcing.len() != n * n {
        return Err(Error::shape("darcy", format!("{} forcing values on a {n}x{n} grid", forcing.len())));
    }
    let f = system.interior(forcing);
    let x = system.solve_cg(&f, DARCY_TOL, 20 * n * n)?;
    Ok(system.to_grid(&x))
}

/// Darcy pairs `(a, u)` with constant forcing `beta`.
pub fn gen_darcy(n_samples: usize, nx: usize, beta: f64, seed: u64) -> Result<GridDataset> {
    gen_darcy_with(&DarcyCoefficient::default(), n_samples, nx, beta, seed)
}

pub fn gen_darcy_with(
    coeff: &DarcyCoefficient,
    n_samples: usize,
    nx: usize,
    beta: f64,
    seed: u64,
) -> Result<GridDataset> {
    if nx < 16 {
        return Err(Error::InvalidArgument(format!("Darcy grid must be at least 16, got {nx}")));
    }
    if !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("forcing must be finite, got {beta}")));
    }
    let grid = GridSpec::new(vec![nx, nx])?;
    let forcing = vec![beta; nx * nx];
    let samples: Result<Vec<GridSample>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let a = coeff.sample(nx, seed, i as u64)?;
            let u = solve_darcy(nx, &a, &forcing).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("Darcy sample {i}: {msg}")),
                other => other,
            })?;
            GridSample::new(
                ComplexTensor::from_real(vec![1, nx, nx], &a)?,
                ComplexTensor::from_real(vec![1, nx, nx], &u)?,
            )
        })
        .collect();
    let mut ds = GridDataset::new(grid, 1, 1);
    for s in samples? {
        ds.push(s)?;
    }
    let meta = [
        ("pde", "darcy".to_string()),
        ("beta", beta.to_string()),
        ("seed", seed.to_string()),
        ("coeff_tau", coeff.field.tau.to_string()),
        ("coeff_kmax", coeff.field.kmax.to_string()),
        ("coeff_levels", format!("{},{}", coeff.low, coeff.high)),
        ("solver", format!("5-point finite volume, harmonic faces, Jacobi CG tol {DARCY_TOL:e}")),
    ];
    ds.meta = meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(ds)
}

pub fn write_gfd(ds: &GridDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_gfd_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_gfd_to<W: Write>(ds: &GridDataset, w: &mut W) -> Result<()> {
    w.write_all(GFD_MAGIC)?;
    w.write_all(&GFD_VERSION.to_le_bytes())?;
    w.write_all(&[GFD_DTYPE_F64, ds.grid.spatial_dims() as u8])?;
    for &s in ds.grid.sizes() {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for v in [ds.len(), ds.c_in, ds.c_out] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let meta = ds.meta_text();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    for s in &ds.samples {
        for v in s.input.data() {
            w.write_all(&v.re.to_le_bytes())?;
        }
    }
    for s in &ds.samples {
        for v in s.output.data() {
            w.write_all(&v.re.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_gfd(path: impl AsRef<Path>) -> Result<GridDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingDataset(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let len = file.metadata()?.len();
    read_gfd_from(&mut std::io::BufReader::new(file), Some(len))
}

/// Parse a GFD stream; `total_len` lets the payload size be checked before allocation.
pub fn read_gfd_from<R: Read>(r: &mut R, total_len: Option<u64>) -> Result<GridDataset> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != GFD_MAGIC {
        return Err(Error::Format("not a GFD file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != GFD_VERSION {
        return Err(Error::Format(format!("unsupported GFD version {version}")));
    }
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    if b[0] != GFD_DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype code {}", b[0])));
    }
    let dims = b[1] as usize;
    if !(1..=2).contains(&dims) {
        return Err(Error::Format(format!("unsupported spatial dims {dims}")));
    }
    let mut sizes = Vec::with_capacity(dims);
    for _ in 0..dims {
        sizes.push(read_u32(r)? as usize);
    }
    let grid = GridSpec::new(sizes).map_err(|e| Error::Format(e.to_string()))?;
    let n = read_u32(r)? as usize;
    let c_in = read_u32(r)? as usize;
    let c_out = read_u32(r)? as usize;
    if c_in == 0 || c_out == 0 {
        return Err(Error::Format("zero channel count".into()));
    }
    let meta_len = read_u32(r)? as usize;
    if meta_len > MAX_META {
        return Err(Error::Format(format!("metadata of {meta_len} bytes is implausible")));
    }
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(r, &mut meta_bytes)?;
    let meta_text = String::from_utf8(meta_bytes).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let header = 4 + 4 + 2 + 4 * dims + 12 + 4 + meta_len;
    let values = (n as u128) * ((c_in + c_out) as u128) * (grid.points() as u128);
    if let Some(total) = total_len {
        let expected = header as u128 + 8 * values;
        if expected != total as u128 {
            return Err(Error::Format(format!(
                "file holds {total} bytes, header implies {expected}"
            )));
        }
    }
    let mut meta = BTreeMap::new();
    for line in meta_text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let read_block = |r: &mut R, c: usize| -> Result<Vec<ComplexTensor>> {
        let per = c * grid.points();
        let shape: Vec<usize> = std::iter::once(c).chain(grid.sizes().iter().copied()).collect();
        let mut buf = vec![0u8; per * 8];
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            read_exact(r, &mut buf)?;
            let vals: Vec<C64> = buf
                .chunks_exact(8)
                .map(|ch| C64::new(f64::from_le_bytes(ch.try_into().expect("8-byte chunk")), 0.0))
                .collect();
            out.push(ComplexTensor::new(shape.clone(), vals)?);
        }
        Ok(out)
    };
    let inputs = read_block(r, c_in)?;
    let outputs = read_block(r, c_out)?;
    let mut ds = GridDataset::new(grid, c_in, c_out);
    ds.meta = meta;
    // stored values are trusted as-is so the round trip stays bit-exact
    ds.samples = inputs
        .into_iter()
        .zip(outputs)
        .map(|(input, output)| GridSample { input, output })
        .collect();
    Ok(ds)
}
