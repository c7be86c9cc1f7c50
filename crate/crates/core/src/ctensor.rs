//! Dense complex tensors.
//!
//! Every field in the pipeline is a [`ComplexTensor`] laid out channels-first
//! (`[C, X]` or `[C, X, Y]`) in row-major order. Real fields are complex
//! tensors whose imaginary parts are zero.

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::shape("new", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![ZERO; n],
        }
    }

    pub fn filled(shape: &[usize], value: C64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_real(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn scalar(value: C64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Leading (channel) extent.
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Extents after the channel axis.
    pub fn spatial(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// Number of grid points per channel.
    pub fn spatial_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[C64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [C64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Elementwise scalar offset.
    pub fn add_scalar(&self, s: C64) -> Self {
        self.map(|z| z + s)
    }

    /// Real part, kept as a complex tensor with zero imaginary parts.
    pub fn real_part(&self) -> Self {
        self.map(|z| C64::new(z.re, 0.0))
    }

    pub fn re_values(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `sum(conj(self) * other)`.
    pub fn dot(&self, other: &Self) -> Result<C64> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn sum(&self) -> C64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Max absolute difference; panics-free helper for tests and checks.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }

    /// `‖self − other‖ / ‖other‖` (absolute when `other` is zero).
    pub fn rel_diff(&self, other: &Self) -> Result<f64> {
        let d = self.sub(other)?.norm();
        let n = other.norm();
        Ok(if n > 0.0 { d / n } else { d })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&ComplexTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let spatial = first.spatial().to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.spatial() != spatial.as_slice() {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            channels += p.channels();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![channels];
        shape.extend(spatial);
        Self::new(shape, data)
    }

    /// Channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.channels() || count == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("[{start}, {}) of {:?}", start + count, self.shape),
            ));
        }
        let n = self.spatial_len();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Self::new(shape, self.data[start * n..(start + count) * n].to_vec())
    }

    /// Circular shift of spatial axis `dim` (0-based over spatial axes) by `by` samples.
    pub fn roll_spatial(&self, dim: usize, by: isize) -> Self {
        let axis = dim + 1;
        let (outer, n, inner) = axis_view(&self.shape, axis);
        let mut out = self.clone();
        for o in 0..outer {
            for j in 0..n {
                let dst = (j as isize + by).rem_euclid(n as isize) as usize;
                let src_off = (o * n + j) * inner;
                let dst_off = (o * n + dst) * inner;
                out.data[dst_off..dst_off + inner].copy_from_slice(&self.data[src_off..src_off + inner]);
            }
        }
        out
    }
}

/// View a shape as `[outer, n, inner]` around `axis`.
pub fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Apply a dense `rows × cols` matrix (row-major) along `axis`, whose extent must be `cols`.
pub fn contract_axis(m: &[C64], rows: usize, cols: usize, x: &ComplexTensor, axis: usize) -> Result<ComplexTensor> {
    if axis >= x.ndim() || x.shape[axis] != cols || m.len() != rows * cols {
        return Err(Error::shape(
            "contract_axis",
            format!("{rows}x{cols} matrix on axis {axis} of {:?}", x.shape),
        ));
    }
    let (outer, n, inner) = axis_view(&x.shape, axis);
    let mut shape = x.shape.clone();
    shape[axis] = rows;
    let mut out = vec![ZERO; outer * rows * inner];
    if inner == 1 {
        for o in 0..outer {
            let lane = &x.data[o * n..(o + 1) * n];
            for r in 0..rows {
                let row = &m[r * cols..(r + 1) * cols];
                let mut acc = ZERO;
                for (a, b) in row.iter().zip(lane) {
                    acc += a * b;
                }
                out[o * rows + r] = acc;
            }
        }
    } else {
        for o in 0..outer {
            for r in 0..rows {
                let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                for c in 0..cols {
                    let w = m[r * cols + c];
                    if w == ZERO {
                        continue;
                    }
                    let src = &x.data[(o * n + c) * inner..(o * n + c + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    ComplexTensor::new(shape, out)
}

/// Per grid point channel mixing `y[o] = Σ_i w[o, i] x[i]`.
pub fn matmul_channels(w: &ComplexTensor, x: &ComplexTensor) -> Result<ComplexTensor> {
    if w.ndim() != 2 || x.ndim() < 2 || w.shape[1] != x.shape[0] {
        return Err(Error::shape(
            "matmul_channels",
            format!("weights {:?} vs input {:?}", w.shape, x.shape),
        ));
    }
    contract_axis(&w.data, w.shape[0], w.shape[1], x, 0)
}

/// Integer origin of the centered index, `n − ⌊N/2⌋`.
pub fn centered_origin(n: usize) -> usize {
    n / 2
}

fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("fft planner poisoned");
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Unnormalized standard-origin FFT of every lane along `axis`.
pub fn fft_axis(x: &ComplexTensor, axis: usize, inverse: bool) -> ComplexTensor {
    let (outer, n, inner) = axis_view(&x.shape, axis);
    let plan = fft_plan(n, inverse);
    let mut out = x.clone();
    let mut lane = vec![ZERO; n];
    for o in 0..outer {
        for i in 0..inner {
            for (j, v) in lane.iter_mut().enumerate() {
                *v = x.data[(o * n + j) * inner + i];
            }
            plan.process(&mut lane);
            for (j, v) in lane.iter().enumerate() {
                out.data[(o * n + j) * inner + i] = *v;
            }
        }
    }
    out
}

/// Unitary DFT along tensor axis `axis` with centered index origin `⌊N/2⌋`
/// on both the sample and frequency side.
pub fn centered_dft(x: &ComplexTensor, axis: usize, inverse: bool) -> Result<ComplexTensor> {
    if axis >= x.ndim() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for {:?}",
            x.shape
        )));
    }
    let (outer, n, inner) = axis_view(&x.shape, axis);
    let c = centered_origin(n);
    let plan = fft_plan(n, inverse);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = x.clone();
    let mut lane = vec![ZERO; n];
    for o in 0..outer {
        for i in 0..inner {
            // lane[m] = x[(m + c) mod n]
            for (m, v) in lane.iter_mut().enumerate() {
                *v = x.data[(o * n + (m + c) % n) * inner + i];
            }
            plan.process(&mut lane);
            // X[k] = lane[(k − c) mod n]
            for k in 0..n {
                out.data[(o * n + k) * inner + i] = lane[(k + n - c) % n] * scale;
            }
        }
    }
    Ok(out)
}

/// Centered unitary DFT over every spatial axis (axes `1..`).
pub fn centered_dft_spatial(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let mut y = x.clone();
    for axis in 1..x.ndim() {
        y = centered_dft(&y, axis, inverse)?;
    }
    Ok(y)
}

/// Uniform periodic grid on the unit interval or square, `x_j = j / size`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    sizes: Vec<usize>,
}

impl GridSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if !(1..=2).contains(&sizes.len()) {
            return Err(Error::InvalidArgument(format!(
                "grids are 1D or 2D, got {} dims",
                sizes.len()
            )));
        }
        if let Some(s) = sizes.iter().find(|&&s| s < 4) {
            return Err(Error::InvalidArgument(format!("grid extent {s} < 4")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn spatial_dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn spacing(&self, dim: usize) -> f64 {
        1.0 / self.sizes[dim] as f64
    }

    pub fn coords(&self, dim: usize) -> Vec<f64> {
        let h = self.spacing(dim);
        (0..self.sizes[dim]).map(|j| j as f64 * h).collect()
    }

    pub fn points(&self) -> usize {
        self.sizes.iter().product()
    }
}
