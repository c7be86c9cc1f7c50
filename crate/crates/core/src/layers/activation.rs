//! GeLU-based activations, the windowed-sinc resampler and the alias-free wrapper.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::{Arc, OnceLock};

use crate::autodiff::{NodeId, Tape};
use crate::ctensor::{axis_view, ComplexTensor, C64, ZERO};
use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Independent GeLU on real and imaginary parts.
pub fn cgelu(z: &ComplexTensor) -> ComplexTensor {
    z.map(|v| C64::new(gelu(v.re), gelu(v.im)))
}

fn cgelu_grad(pre: &ComplexTensor, g: &ComplexTensor) -> ComplexTensor {
    pre.zip_map(g, "cgelu_back", |z, g| {
        C64::new(g.re * gelu_derivative(z.re), g.im * gelu_derivative(z.im))
    })
    .expect("shape")
}

pub fn cgelu_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let pre = tape.value(x).clone();
    let v = cgelu(&pre);
    let back = tape
        .grad_enabled()
        .then(|| Box::new(move |g: &ComplexTensor| vec![cgelu_grad(&pre, g)]) as _);
    tape.record("cgelu", &[x], v, back)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = 0.25 * x * x;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Zero-phase Kaiser-windowed sinc low-pass for ×2 resampling.
///
/// Defined on the fine grid with cutoff at the coarse-grid Nyquist. Only the
/// centre tap and odd offsets are nonzero, so coarse samples pass through
/// upsampling unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampleFilter {
    /// `odd[t]` is the tap at fine offset `±(2t + 1)`.
    odd: Vec<f64>,
    centre: f64,
    beta: f64,
}

impl ResampleFilter {
    pub const UP_FACTOR: usize = 2;

    pub fn new(taps_per_side: usize, beta: f64) -> Result<Self> {
        if taps_per_side == 0 || !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "filter needs taps >= 1 and beta >= 0, got {taps_per_side}, {beta}"
            )));
        }
        let half_width = 2.0 * taps_per_side as f64;
        let norm = bessel_i0(beta);
        let mut odd: Vec<f64> = (0..taps_per_side)
            .map(|t| {
                let n = (2 * t + 1) as f64;
                let r = n / half_width;
                let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
                let sinc = (PI * n / 2.0).sin() / (PI * n / 2.0);
                0.5 * sinc * window
            })
            .collect();
        // each side of odd taps sums to 1/4 so the DC gain is exactly 1
        let side: f64 = odd.iter().sum();
        odd.iter_mut().for_each(|v| *v *= 0.25 / side);
        Ok(Self {
            odd,
            centre: 0.5,
            beta,
        })
    }

    pub fn taps_per_side(&self) -> usize {
        self.odd.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Full symmetric impulse response on fine offsets `−2T..=2T`.
    pub fn taps(&self) -> Vec<f64> {
        let half = 2 * self.odd.len();
        (0..=2 * half)
            .map(|i| self.tap(i as isize - half as isize))
            .collect()
    }

    pub fn tap(&self, offset: isize) -> f64 {
        let a = offset.unsigned_abs();
        if a == 0 {
            self.centre
        } else if a % 2 == 1 && a / 2 < self.odd.len() {
            self.odd[a / 2]
        } else {
            0.0
        }
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps().iter().sum()
    }

    /// Periodic extension of `x` by `before` and `after` samples.
    fn extend(x: &[C64], before: usize, after: usize) -> Vec<C64> {
        let n = x.len() as isize;
        (-(before as isize)..n + after as isize)
            .map(|k| x[k.rem_euclid(n) as usize])
            .collect()
    }

    /// Fold a periodically extended accumulator back onto `out`.
    fn fold(ext: &[C64], before: usize, out: &mut [C64]) {
        let n = out.len() as isize;
        for (k, v) in ext.iter().enumerate() {
            out[(k as isize - before as isize).rem_euclid(n) as usize] += v;
        }
    }

    fn up_lane(&self, x: &[C64], out: &mut [C64]) {
        let taps = self.odd.len();
        let ext = Self::extend(x, taps, taps + 1);
        for q in 0..x.len() {
            out[2 * q] += x[q];
            let mut acc = ZERO;
            for (t, &c) in self.odd.iter().enumerate() {
                // offsets +(2t+1) and −(2t+1) map to coarse shifts t and −t−1
                acc += (ext[q + taps - t] + ext[q + taps + t + 1]) * c;
            }
            out[2 * q + 1] += acc * 2.0;
        }
    }

    fn up_lane_adjoint(&self, g: &[C64], out: &mut [C64]) {
        let taps = self.odd.len();
        let mut ext = vec![ZERO; out.len() + 2 * taps + 1];
        for q in 0..out.len() {
            ext[q + taps] += g[2 * q];
            let go = g[2 * q + 1] * 2.0;
            for (t, &c) in self.odd.iter().enumerate() {
                let v = go * c;
                ext[q + taps - t] += v;
                ext[q + taps + t + 1] += v;
            }
        }
        Self::fold(&ext, taps, out);
    }

    fn down_lane(&self, f: &[C64], out: &mut [C64]) {
        let half = 2 * self.odd.len();
        let ext = Self::extend(f, half, half);
        for (j, o) in out.iter_mut().enumerate() {
            let c0 = 2 * j + half;
            let mut acc = ext[c0] * self.centre;
            for (t, &c) in self.odd.iter().enumerate() {
                let s = 2 * t + 1;
                acc += (ext[c0 - s] + ext[c0 + s]) * c;
            }
            *o += acc;
        }
    }

    fn down_lane_adjoint(&self, g: &[C64], out: &mut [C64]) {
        let half = 2 * self.odd.len();
        let mut ext = vec![ZERO; out.len() + 2 * half];
        for (j, &gj) in g.iter().enumerate() {
            let c0 = 2 * j + half;
            ext[c0] += gj * self.centre;
            for (t, &c) in self.odd.iter().enumerate() {
                let s = 2 * t + 1;
                let v = gj * c;
                ext[c0 - s] += v;
                ext[c0 + s] += v;
            }
        }
        Self::fold(&ext, half, out);
    }
}

/// Shared default filter: 12 taps per side, Kaiser β = 10.
pub fn default_filter() -> Arc<ResampleFilter> {
    static FILTER: OnceLock<Arc<ResampleFilter>> = OnceLock::new();
    FILTER
        .get_or_init(|| Arc::new(ResampleFilter::new(12, 10.0).expect("valid default filter")))
        .clone()
}

#[derive(Clone, Copy)]
enum LaneOp {
    Up,
    UpAdjoint,
    Down,
    DownAdjoint,
}

fn axpy_real(dst: &mut [C64], src: &[C64], c: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += v * c;
    }
}

/// `dst += c·(a + b)`.
fn axpy_pair(dst: &mut [C64], a: &[C64], b: &[C64], c: f64) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += (x + y) * c;
    }
}

impl ResampleFilter {
    /// Row-wise variants: element `k` of a lane is the contiguous row
    /// `k*inner..(k+1)*inner`, so strided axes run as vector updates.
    fn up_rows(&self, x: &[C64], out: &mut [C64], inner: usize) {
        let n = (x.len() / inner) as isize;
        let row = |k: isize| {
            let k = k.rem_euclid(n) as usize;
            &x[k * inner..(k + 1) * inner]
        };
        for q in 0..n {
            let qe = 2 * q as usize;
            out[qe * inner..(qe + 1) * inner].copy_from_slice(row(q));
            let dst = &mut out[(qe + 1) * inner..(qe + 2) * inner];
            for (t, &c) in self.odd.iter().enumerate() {
                let t = t as isize;
                axpy_pair(dst, row(q - t), row(q + t + 1), 2.0 * c);
            }
        }
    }

    fn up_rows_adjoint(&self, g: &[C64], out: &mut [C64], inner: usize) {
        let n = (out.len() / inner) as isize;
        for q in 0..n {
            let qe = 2 * q as usize;
            let even = &g[qe * inner..(qe + 1) * inner];
            let odd = &g[(qe + 1) * inner..(qe + 2) * inner];
            let at = |k: isize| k.rem_euclid(n) as usize * inner;
            axpy_real(&mut out[at(q)..at(q) + inner], even, 1.0);
            for (t, &c) in self.odd.iter().enumerate() {
                let t = t as isize;
                let (a, b) = (at(q - t), at(q + t + 1));
                axpy_real(&mut out[a..a + inner], odd, 2.0 * c);
                axpy_real(&mut out[b..b + inner], odd, 2.0 * c);
            }
        }
    }

    fn down_rows(&self, f: &[C64], out: &mut [C64], inner: usize) {
        let m = (f.len() / inner) as isize;
        let row = |k: isize| {
            let k = k.rem_euclid(m) as usize;
            &f[k * inner..(k + 1) * inner]
        };
        for (j, dst) in out.chunks_exact_mut(inner).enumerate() {
            let c0 = 2 * j as isize;
            axpy_real(dst, row(c0), self.centre);
            for (t, &c) in self.odd.iter().enumerate() {
                let s = 2 * t as isize + 1;
                axpy_pair(dst, row(c0 - s), row(c0 + s), c);
            }
        }
    }

    fn down_rows_adjoint(&self, g: &[C64], out: &mut [C64], inner: usize) {
        let m = (out.len() / inner) as isize;
        let at = |k: isize| k.rem_euclid(m) as usize * inner;
        for (j, gj) in g.chunks_exact(inner).enumerate() {
            let c0 = 2 * j as isize;
            axpy_real(&mut out[at(c0)..at(c0) + inner], gj, self.centre);
            for (t, &c) in self.odd.iter().enumerate() {
                let s = 2 * t as isize + 1;
                let (a, b) = (at(c0 - s), at(c0 + s));
                axpy_real(&mut out[a..a + inner], gj, c);
                axpy_real(&mut out[b..b + inner], gj, c);
            }
        }
    }
}

fn apply_lanes(filter: &ResampleFilter, x: &ComplexTensor, axis: usize, op: LaneOp) -> Result<ComplexTensor> {
    let (outer, n, inner) = axis_view(x.shape(), axis);
    let m = match op {
        LaneOp::Up | LaneOp::DownAdjoint => 2 * n,
        LaneOp::Down | LaneOp::UpAdjoint => {
            if n % 2 != 0 {
                return Err(Error::shape("downsample", format!("odd extent {n} on axis {axis}")));
            }
            n / 2
        }
    };
    let mut shape = x.shape().to_vec();
    shape[axis] = m;
    let mut out = vec![ZERO; outer * m * inner];
    for (src, dst) in x.data().chunks_exact(n * inner).zip(out.chunks_exact_mut(m * inner)) {
        if inner == 1 {
            match op {
                LaneOp::Up => filter.up_lane(src, dst),
                LaneOp::UpAdjoint => filter.up_lane_adjoint(src, dst),
                LaneOp::Down => filter.down_lane(src, dst),
                LaneOp::DownAdjoint => filter.down_lane_adjoint(src, dst),
            }
        } else {
            match op {
                LaneOp::Up => filter.up_rows(src, dst, inner),
                LaneOp::UpAdjoint => filter.up_rows_adjoint(src, dst, inner),
                LaneOp::Down => filter.down_rows(src, dst, inner),
                LaneOp::DownAdjoint => filter.down_rows_adjoint(src, dst, inner),
            }
        }
    }
    ComplexTensor::new(shape, out)
}

fn over_spatial(
    filter: &ResampleFilter,
    x: &ComplexTensor,
    op: LaneOp,
    reverse: bool,
) -> Result<ComplexTensor> {
    let mut axes: Vec<usize> = (1..x.ndim()).collect();
    if reverse {
        axes.reverse();
    }
    let mut cur = x.clone();
    for axis in axes {
        cur = apply_lanes(filter, &cur, axis, op)?;
    }
    Ok(cur)
}

/// ×2 upsampling on every spatial axis: zero insertion then low-pass (gain 2).
pub fn upsample2(filter: &ResampleFilter, x: &ComplexTensor) -> Result<ComplexTensor> {
    over_spatial(filter, x, LaneOp::Up, false)
}

/// Low-pass then ×2 decimation on every spatial axis.
pub fn downsample2(filter: &ResampleFilter, x: &ComplexTensor) -> Result<ComplexTensor> {
    for (d, &n) in x.spatial().iter().enumerate() {
        if n % 2 != 0 {
            return Err(Error::shape("downsample2", format!("odd extent {n} on spatial dim {d}")));
        }
    }
    over_spatial(filter, x, LaneOp::Down, false)
}

pub fn upsample2_node(tape: &mut Tape, filter: &Arc<ResampleFilter>, x: NodeId) -> Result<NodeId> {
    let v = upsample2(filter, tape.value(x))?;
    let f = filter.clone();
    let back = tape.grad_enabled().then(|| {
        Box::new(move |g: &ComplexTensor| vec![over_spatial(&f, g, LaneOp::UpAdjoint, true).expect("shape")]) as _
    });
    tape.record("upsample2", &[x], v, back)
}

pub fn downsample2_node(tape: &mut Tape, filter: &Arc<ResampleFilter>, x: NodeId) -> Result<NodeId> {
    let v = downsample2(filter, tape.value(x))?;
    let f = filter.clone();
    let back = tape.grad_enabled().then(|| {
        Box::new(move |g: &ComplexTensor| vec![over_spatial(&f, g, LaneOp::DownAdjoint, true).expect("shape")]) as _
    });
    tape.record("downsample2", &[x], v, back)
}

/// Intermediate fields of the alias-free pipeline, exposed for inspection.
pub struct AliasFreeStages {
    /// Upsampled input on the fine grid.
    pub fine: ComplexTensor,
    /// Fine-grid activation after the low-pass, before decimation.
    pub filtered: ComplexTensor,
    pub output: ComplexTensor,
}

/// Filtered low-pass without decimation (fine grid to fine grid).
fn lowpass_fine(filter: &ResampleFilter, x: &ComplexTensor) -> ComplexTensor {
    // low-pass equals upsampling the decimation of each polyphase pair;
    // computed directly as a circular convolution with the full taps
    let taps = filter.taps();
    let half = (taps.len() / 2) as isize;
    let mut cur = x.clone();
    for axis in 1..x.ndim() {
        let (outer, n, inner) = axis_view(cur.shape(), axis);
        let mut out = vec![ZERO; cur.len()];
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..n {
                    let mut acc = ZERO;
                    for (ti, &c) in taps.iter().enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        let src = (k as isize - (ti as isize - half)).rem_euclid(n as isize) as usize;
                        acc += cur.data()[(o * n + src) * inner + i] * c;
                    }
                    out[(o * n + k) * inner + i] = acc;
                }
            }
        }
        cur = ComplexTensor::new(cur.shape().to_vec(), out).expect("shape");
    }
    cur
}

pub fn alias_free_stages(filter: &ResampleFilter, x: &ComplexTensor) -> Result<AliasFreeStages> {
    let fine = upsample2(filter, x)?;
    let act = cgelu(&fine);
    let filtered = lowpass_fine(filter, &act);
    let output = downsample2(filter, &act)?;
    Ok(AliasFreeStages {
        fine,
        filtered,
        output,
    })
}

/// Upsample ×2, GeLU on the fine grid, low-pass at the original Nyquist, decimate.
pub fn alias_free_activation(filter: &ResampleFilter, x: &ComplexTensor) -> Result<ComplexTensor> {
    downsample2(filter, &cgelu(&upsample2(filter, x)?))
}

pub fn alias_free_node(tape: &mut Tape, filter: &Arc<ResampleFilter>, x: NodeId) -> Result<NodeId> {
    let fine = upsample2(filter, tape.value(x))?;
    let v = downsample2(filter, &cgelu(&fine))?;
    let f = filter.clone();
    let back = tape.grad_enabled().then(|| {
        Box::new(move |g: &ComplexTensor| {
            let g_act = over_spatial(&f, g, LaneOp::DownAdjoint, true).expect("shape");
            let g_fine = cgelu_grad(&fine, &g_act);
            vec![over_spatial(&f, &g_fine, LaneOp::UpAdjoint, true).expect("shape")]
        }) as _
    });
    tape.record("alias_free_activation", &[x], v, back)
}

/// Nonlinearity used inside a model.
#[derive(Clone, Debug)]
pub enum Activation {
    AliasFree(Arc<ResampleFilter>),
    Pointwise,
}

impl Activation {
    pub fn alias_free() -> Self {
        Activation::AliasFree(default_filter())
    }

    pub fn apply(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        match self {
            Activation::AliasFree(f) => alias_free_activation(f, x),
            Activation::Pointwise => Ok(cgelu(x)),
        }
    }

    pub fn node(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::AliasFree(f) => alias_free_node(tape, f, x),
            Activation::Pointwise => cgelu_node(tape, x),
        }
    }
}
