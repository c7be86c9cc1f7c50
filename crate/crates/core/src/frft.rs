//! Discrete fractional Fourier transform with a differentiable order.
//!
//! The transform is built from the eigenvectors of the Dickinson–Steiglitz
//! matrix `S`, which commutes with the DFT. `S` is split into its even and odd
//! parity blocks (both symmetric tridiagonal); eigenvectors of each block are
//! sorted by descending eigenvalue and receive Hermite indices `0, 2, 4, …`
//! and `1, 3, 5, …`. For even `N` the last even index is `N` rather than
//! `N − 2`, since no eigenvector carries index `N − 1`.
//!
//! With `V` the resulting orthonormal basis (shifted to the centered origin)
//! and `k` its indices, `F^α = V · diag(exp(−iπkα/2)) · Vᵀ`. At `α = 1` this
//! reproduces the centered unitary DFT of [`crate::ctensor::centered_dft`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock, RwLock};

use crate::ctensor::{centered_origin, contract_axis, ComplexTensor, C64, ZERO};
use crate::error::{Error, Result};

const PLAN_MAGIC: &[u8; 4] = b"FRPL";
const PLAN_VERSION: u32 = 1;

/// Eigendecomposition of a symmetric tridiagonal matrix by implicit QL.
///
/// Returns eigenvalues and the column-major eigenvector matrix `z`
/// (`z[i * n + j]` is component `i` of eigenvector `j`).
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    if off.len() + 1 != n.max(1) {
        return Err(Error::InvalidArgument(format!(
            "tridiagonal: {} diagonal vs {} off-diagonal entries",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical(format!(
                    "tridiagonal QL did not converge for eigenvalue {l} of {n}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zf = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * zf;
                    z[k * n + i] = c * z[k * n + i] - s * zf;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z))
}

/// Cached eigenbasis of the centered DFT for one grid size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrftPlan {
    n: usize,
    /// Row-major `n × n`: row = sample, column = eigenvector.
    eigvecs: Vec<f64>,
    /// Hermite index of each column, ascending.
    hermite: Vec<usize>,
}

/// One parity block: orthonormal sparse basis vectors, each a list of (index, weight).
fn parity_basis(n: usize, odd: bool) -> Vec<Vec<(usize, f64)>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::new();
    for j in 0..=n / 2 {
        let mirror = (n - j) % n;
        if mirror == j {
            if !odd {
                basis.push(vec![(j, 1.0)]);
            }
        } else if odd {
            basis.push(vec![(j, h), (mirror, -h)]);
        } else {
            basis.push(vec![(j, h), (mirror, h)]);
        }
    }
    basis
}

/// `aᵀ S b` for the periodic tridiagonal commutor `S`.
fn commutor_form(n: usize, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let diag = |i: usize| 2.0 * (2.0 * PI * i as f64 / n as f64).cos() - 4.0;
    let mut acc = 0.0;
    for &(i, wi) in a {
        for &(j, wj) in b {
            let s = if i == j {
                diag(i)
            } else if (i + 1) % n == j || (j + 1) % n == i {
                1.0
            } else {
                0.0
            };
            acc += wi * wj * s;
        }
    }
    acc
}

impl FrftPlan {
    pub fn build(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("FrFT plan needs n >= 4, got {n}")));
        }
        let mut columns: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
        for odd in [false, true] {
            let basis = parity_basis(n, odd);
            let m = basis.len();
            if m == 0 {
                continue;
            }
            let diag: Vec<f64> = (0..m).map(|j| commutor_form(n, &basis[j], &basis[j])).collect();
            let off: Vec<f64> = (0..m.saturating_sub(1))
                .map(|j| commutor_form(n, &basis[j], &basis[j + 1]))
                .collect();
            let (vals, z) = tridiagonal_eigen(&diag, &off)?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
            for (rank, &col) in order.iter().enumerate() {
                let mut k = 2 * rank + usize::from(odd);
                if !odd && n % 2 == 0 && rank == m - 1 {
                    k = n;
                }
                let mut u = vec![0.0; n];
                for (j, b) in basis.iter().enumerate() {
                    let w = z[j * m + col];
                    for &(idx, bw) in b {
                        u[idx] += w * bw;
                    }
                }
                columns.push((k, u));
            }
        }
        columns.sort_by_key(|(k, _)| *k);

        let c = centered_origin(n);
        let mut eigvecs = vec![0.0; n * n];
        let mut hermite = Vec::with_capacity(n);
        for (col, (k, u)) in columns.iter().enumerate() {
            // centered sample index s holds standard-origin index (s − c) mod n
            let mut v: Vec<f64> = (0..n).map(|s| u[(s + n - c) % n]).collect();
            let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-9 * peak) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            for (s, x) in v.into_iter().enumerate() {
                eigvecs[s * n + col] = x;
            }
            hermite.push(*k);
        }
        Ok(Self { n, eigvecs, hermite })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hermite_indices(&self) -> &[usize] {
        &self.hermite
    }

    /// Component `sample` of eigenvector `col`.
    pub fn eigvec(&self, sample: usize, col: usize) -> f64 {
        self.eigvecs[sample * self.n + col]
    }

    /// Eigenvector `col` as a 1-channel signal.
    pub fn eigvec_signal(&self, col: usize) -> ComplexTensor {
        let data = (0..self.n).map(|s| C64::new(self.eigvec(s, col), 0.0)).collect();
        ComplexTensor::new(vec![self.n], data).expect("plan size")
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a..n {
                let dot: f64 = (0..n).map(|s| self.eigvec(s, a) * self.eigvec(s, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Rows `rows` of `V · diag(f(k)) · Vᵀ`, row-major `rows.len() × n`.
    fn spectral_rows(&self, rows: &[usize], f: impl Fn(usize) -> C64) -> Vec<C64> {
        let n = self.n;
        let lambda: Vec<C64> = self.hermite.iter().map(|&k| f(k)).collect();
        let mut out = vec![ZERO; rows.len() * n];
        let mut scaled = vec![ZERO; n];
        for (ri, &r) in rows.iter().enumerate() {
            for k in 0..n {
                scaled[k] = lambda[k] * self.eigvecs[r * n + k];
            }
            let dst = &mut out[ri * n..(ri + 1) * n];
            for (s, d) in dst.iter_mut().enumerate() {
                let vrow = &self.eigvecs[s * n..(s + 1) * n];
                let mut acc = ZERO;
                for (a, &b) in scaled.iter().zip(vrow) {
                    acc += a * b;
                }
                *d = acc;
            }
        }
        out
    }

    /// Rows of `F^α`.
    pub fn rows(&self, alpha: f64, rows: &[usize]) -> Vec<C64> {
        self.spectral_rows(rows, |k| eigenphase(k, alpha))
    }

    /// Rows of `∂F^α/∂α`.
    pub fn derivative_rows(&self, alpha: f64, rows: &[usize]) -> Vec<C64> {
        self.spectral_rows(rows, |k| eigenphase_derivative(k, alpha))
    }

    /// The full `n × n` matrix `F^α`.
    pub fn matrix(&self, alpha: f64) -> Vec<C64> {
        let all: Vec<usize> = (0..self.n).collect();
        self.rows(alpha, &all)
    }

    pub fn derivative_matrix(&self, alpha: f64) -> Vec<C64> {
        let all: Vec<usize> = (0..self.n).collect();
        self.derivative_rows(alpha, &all)
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(PLAN_MAGIC)?;
        w.write_all(&PLAN_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for &k in &self.hermite {
            w.write_all(&(k as u32).to_le_bytes())?;
        }
        for &v in &self.eigvecs {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read, n: usize) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != PLAN_MAGIC
            || u32::from_le_bytes(head[4..8].try_into().unwrap()) != PLAN_VERSION
            || u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize != n
        {
            return Err(Error::Format("plan cache header mismatch".into()));
        }
        let mut buf = vec![0u8; 4 * n + 8 * n * n];
        r.read_exact(&mut buf)?;
        let hermite = buf[..4 * n]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let eigvecs = buf[4 * n..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { n, eigvecs, hermite })
    }
}

/// `exp(−iπkα/2)`.
pub fn eigenphase(k: usize, alpha: f64) -> C64 {
    // reduce k·α modulo 4 first so large indices keep full precision
    let t = (k as f64 * alpha).rem_euclid(4.0);
    C64::from_polar(1.0, -PI * t / 2.0)
}

/// `∂/∂α exp(−iπkα/2) = (−iπk/2)·exp(−iπkα/2)`.
pub fn eigenphase_derivative(k: usize, alpha: f64) -> C64 {
    C64::new(0.0, -PI * k as f64 / 2.0) * eigenphase(k, alpha)
}

/// Learnable order, reported modulo the period 4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FractionalOrder(pub f64);

impl FractionalOrder {
    pub fn reported(self) -> f64 {
        self.0.rem_euclid(4.0)
    }
}

fn cache() -> &'static RwLock<HashMap<usize, Arc<FrftPlan>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<FrftPlan>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn disk_cache_path(n: usize) -> Option<PathBuf> {
    std::env::var_os("CONO_CACHE_DIR").map(|d| PathBuf::from(d).join(format!("frft-{n}.plan")))
}

/// Shared plan for grid size `n`, built on first use.
///
/// When `CONO_CACHE_DIR` is set, plans are also persisted there.
pub fn plan(n: usize) -> Result<Arc<FrftPlan>> {
    if let Some(p) = cache().read().expect("plan cache poisoned").get(&n) {
        return Ok(p.clone());
    }
    let built = match disk_cache_path(n) {
        Some(path) => match std::fs::File::open(&path)
            .map_err(Error::from)
            .and_then(|f| FrftPlan::read_from(&mut std::io::BufReader::new(f), n))
        {
            Ok(p) => p,
            Err(_) => {
                let p = FrftPlan::build(n)?;
                if let Some(dir) = path.parent() {
                    let _ = std::fs::create_dir_all(dir);
                }
                if let Ok(f) = std::fs::File::create(&path) {
                    let _ = p.write_to(&mut std::io::BufWriter::new(f));
                }
                p
            }
        },
        None => FrftPlan::build(n)?,
    };
    let built = Arc::new(built);
    let mut guard = cache().write().expect("plan cache poisoned");
    Ok(guard.entry(n).or_insert(built).clone())
}

fn check_axis(plan: &FrftPlan, x: &ComplexTensor, axis: usize) -> Result<()> {
    if axis >= x.ndim() || x.shape()[axis] != plan.n {
        return Err(Error::shape(
            "frft",
            format!("plan size {} vs axis {axis} of {:?}", plan.n, x.shape()),
        ));
    }
    Ok(())
}

/// `F^α` along tensor axis `axis`.
pub fn frft_apply(plan: &FrftPlan, x: &ComplexTensor, axis: usize, alpha: f64) -> Result<ComplexTensor> {
    check_axis(plan, x, axis)?;
    contract_axis(&plan.matrix(alpha), plan.n, plan.n, x, axis)
}

/// `(F^α x, ∂(F^α x)/∂α)` along `axis`.
pub fn frft_apply_grad_alpha(
    plan: &FrftPlan,
    x: &ComplexTensor,
    axis: usize,
    alpha: f64,
) -> Result<(ComplexTensor, ComplexTensor)> {
    check_axis(plan, x, axis)?;
    let y = contract_axis(&plan.matrix(alpha), plan.n, plan.n, x, axis)?;
    let dy = contract_axis(&plan.derivative_matrix(alpha), plan.n, plan.n, x, axis)?;
    Ok((y, dy))
}

/// Transform every spatial axis of a channels-first tensor with its own order.
/// `inverse` negates every order.
pub fn frft_nd(plans: &[Arc<FrftPlan>], x: &ComplexTensor, alphas: &[f64], inverse: bool) -> Result<ComplexTensor> {
    let dims = x.ndim().saturating_sub(1);
    if plans.len() != dims || alphas.len() != dims {
        return Err(Error::shape(
            "frft_nd",
            format!(
                "{} plans / {} orders for {:?}",
                plans.len(),
                alphas.len(),
                x.shape()
            ),
        ));
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut y = x.clone();
    for (d, (p, &a)) in plans.iter().zip(alphas).enumerate() {
        y = frft_apply(p, &y, d + 1, sign * a)?;
    }
    Ok(y)
}

/// Plans for every spatial extent of `shape` (channels-first).
pub fn plans_for(shape: &[usize]) -> Result<Vec<Arc<FrftPlan>>> {
    shape[1..].iter().map(|&n| plan(n)).collect()
}

/// Outcome of one property in [`property_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub error: f64,
    pub bound: f64,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.bound
    }
}

/// Algebraic checks of the size-`n` transform on random complex signals.
///
/// Orders are drawn from `[−2, 3]`. Errors are `‖y − z‖₂ / ‖x‖₂` except the
/// eigenbasis check, which is a max-abs entry of `VᵀV − I`.
pub fn property_suite(n: usize, seed: u64) -> Result<Vec<PropertyCheck>> {
    use rand::{Rng, SeedableRng};
    let p = plan(n)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let signal = |rng: &mut rand_chacha::ChaCha8Rng| {
        let data = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        ComplexTensor::new(vec![n], data)
    };
    let rel = |a: &ComplexTensor, b: &ComplexTensor, x: &ComplexTensor| -> Result<f64> { Ok(a.sub(b)?.norm() / x.norm()) };
    let f = |x: &ComplexTensor, a: f64| frft_apply(&p, x, 0, a);
    let mut out = Vec::new();
    let mut worst = |name: &str, bound: f64, errs: Vec<f64>| {
        out.push(PropertyCheck {
            name: name.to_string(),
            error: errs.into_iter().fold(0.0, f64::max),
            bound,
        })
    };
    let trials = 4;
    let xs = (0..trials).map(|_| signal(&mut rng)).collect::<Result<Vec<_>>>()?;
    let orders: Vec<(f64, f64)> = (0..trials).map(|_| (rng.gen_range(-2.0..3.0), rng.gen_range(-2.0..3.0))).collect();

    worst("eigenbasis orthonormal", 1e-10, vec![p.orthonormality_defect()]);
    let mut unit = Vec::new();
    let mut add = Vec::new();
    let mut period = Vec::new();
    let mut grad = Vec::new();
    for (x, &(a, b)) in xs.iter().zip(&orders) {
        let y = f(x, a)?;
        unit.push((y.norm() - x.norm()).abs() / x.norm());
        add.push(rel(&f(&f(x, b)?, a)?, &f(x, a + b)?, x)?);
        period.push(rel(&f(x, a + 4.0)?, &y, x)?);
        let eps = 1e-5;
        let (_, dy) = frft_apply_grad_alpha(&p, x, 0, a)?;
        // fourth-order central stencil: high Hermite indices make the
        // second-order truncation error grow like N³
        let d1 = f(x, a + eps)?.sub(&f(x, a - eps)?)?;
        let d2 = f(x, a + 2.0 * eps)?.sub(&f(x, a - 2.0 * eps)?)?;
        let fd = d1.scale(C64::new(8.0, 0.0)).sub(&d2)?.scale(C64::new(1.0 / (12.0 * eps), 0.0));
        grad.push(dy.sub(&fd)?.norm());
    }
    worst("unitarity", 1e-10, unit);
    worst("additivity", 1e-9, add);
    worst("periodicity", 1e-9, period);

    let c = centered_origin(n);
    let mut id0 = Vec::new();
    let mut dft = Vec::new();
    let mut parity = Vec::new();
    let mut idft = Vec::new();
    let mut id4 = Vec::new();
    for x in &xs {
        id0.push(rel(&f(x, 0.0)?, x, x)?);
        dft.push(rel(&f(x, 1.0)?, &crate::ctensor::centered_dft(x, 0, false)?, x)?);
        let flipped = ComplexTensor::new(vec![n], (0..n).map(|j| x.data()[(2 * c + n - j) % n]).collect())?;
        parity.push(rel(&f(x, 2.0)?, &flipped, x)?);
        idft.push(rel(&f(x, 3.0)?, &crate::ctensor::centered_dft(x, 0, true)?, x)?);
        id4.push(rel(&f(x, 4.0)?, x, x)?);
    }
    worst("order 0 is identity", 1e-8, id0);
    worst("order 1 is centered DFT", 1e-8, dft);
    worst("order 2 is parity", 1e-8, parity);
    worst("order 3 is inverse DFT", 1e-8, idft);
    worst("order 4 is identity", 1e-8, id4);
    worst("order gradient vs central differences", 1e-6, grad);
    Ok(out)
}
