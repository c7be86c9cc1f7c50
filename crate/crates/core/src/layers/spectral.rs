//! Learnable-order fractional spectral convolution.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::ctensor::{centered_origin, contract_axis, ComplexTensor, C64, ZERO};
use crate::error::{Error, Result};
use crate::frft::{plan, FrftPlan};
use crate::layers::complex_glorot;

/// Indices of the `m` transform bins nearest the centred origin.
pub fn retained_bins(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("modes {m} not in 1..={n}")));
    }
    let start = centered_origin(n) - m / 2;
    Ok((start..start + m).collect())
}

fn conj_transpose(a: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c].conj();
        }
    }
    out
}

/// Band-limited transfer of a periodic signal from `n` to `r` samples, as an
/// `r × n` matrix. Frequencies below both Nyquist limits are kept; the shared
/// Nyquist bin is folded when shrinking and split evenly when growing.
pub fn transfer_matrix(n: usize, r: usize) -> Arc<Vec<C64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<C64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("transfer cache poisoned").get(&(n, r)) {
        return t.clone();
    }
    let small = n.min(r);
    let half = (small / 2) as i64;
    // (frequency on the source grid, frequency on the target grid, weight)
    let mut terms: Vec<(i64, i64, f64)> = Vec::new();
    for f in -half..=half {
        if small % 2 == 0 && f.abs() == half {
            continue;
        }
        terms.push((f, f, 1.0));
    }
    if small % 2 == 0 {
        if r < n {
            terms.push((half, half, 1.0));
            terms.push((-half, half, 1.0));
        } else if r > n {
            terms.push((half, half, 0.5));
            terms.push((half, -half, 0.5));
        } else {
            terms.push((half, half, 1.0));
        }
    }
    let tau = 2.0 * std::f64::consts::PI;
    let mut t = vec![ZERO; r * n];
    for i in 0..r {
        for j in 0..n {
            let mut acc = ZERO;
            for &(fs, ft, w) in &terms {
                let phase = tau * (ft as f64 * i as f64 / r as f64 - fs as f64 * j as f64 / n as f64);
                acc += C64::from_polar(w, phase);
            }
            t[i * n + j] = acc / n as f64;
        }
    }
    let t = Arc::new(t);
    cache.lock().expect("transfer cache poisoned").insert((n, r), t.clone());
    t
}

/// Row-major `(p × q)(q × s)` product.
fn matmul(a: &[C64], b: &[C64], p: usize, q: usize, s: usize) -> Vec<C64> {
    let mut out = vec![ZERO; p * s];
    for i in 0..p {
        let row = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == ZERO {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[k * s..(k + 1) * s]) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// Dense per-dimension operators for one evaluation.
struct Operators {
    /// `m × N` retained rows of `F^α`.
    fwd: Vec<Vec<C64>>,
    /// `N × m` conjugate transpose.
    inv: Vec<Vec<C64>>,
    /// `∂/∂α` of `fwd` and `inv`.
    dfwd: Vec<Vec<C64>>,
    dinv: Vec<Vec<C64>>,
    /// Adjoints of `fwd` and `inv`; they differ from `inv` and `fwd` when
    /// the transform runs on a reference grid.
    fwd_adj: Vec<Vec<C64>>,
    inv_adj: Vec<Vec<C64>>,
    n: Vec<usize>,
    m: Vec<usize>,
}

impl Operators {
    /// `plans` are for the reference grid when one is given, else for the input grid.
    fn build(
        plans: &[Arc<FrftPlan>],
        alphas: &[f64],
        modes: &[usize],
        grid: &[usize],
        with_derivative: bool,
    ) -> Result<Self> {
        let mut ops = Operators {
            fwd: Vec::new(),
            inv: Vec::new(),
            dfwd: Vec::new(),
            dinv: Vec::new(),
            fwd_adj: Vec::new(),
            inv_adj: Vec::new(),
            n: Vec::new(),
            m: Vec::new(),
        };
        for (((p, &a), &m), &n) in plans.iter().zip(alphas).zip(modes).zip(grid) {
            let r = p.n();
            let rows = retained_bins(r, m)?;
            // transfer n -> r before the transform and r -> n after it
            let (to_ref, from_ref) = if r == n {
                (None, None)
            } else {
                (Some(transfer_matrix(n, r)), Some(transfer_matrix(r, n)))
            };
            let analysis = |f: Vec<C64>| match &to_ref {
                Some(t) => matmul(&f, t, m, r, n),
                None => f,
            };
            let synthesis = |f: &[C64]| {
                let fh = conj_transpose(f, m, r);
                match &from_ref {
                    Some(t) => matmul(t, &fh, n, r, m),
                    None => fh,
                }
            };
            let f = p.rows(a, &rows);
            let inv = synthesis(&f);
            let fwd = analysis(f);
            ops.fwd_adj.push(conj_transpose(&fwd, m, n));
            ops.inv_adj.push(conj_transpose(&inv, n, m));
            ops.fwd.push(fwd);
            ops.inv.push(inv);
            if with_derivative {
                let d = p.derivative_rows(a, &rows);
                ops.dinv.push(synthesis(&d));
                ops.dfwd.push(analysis(d));
            }
            ops.n.push(n);
            ops.m.push(m);
        }
        Ok(ops)
    }

    /// Forward transform; `swap` replaces dimension `d` by its derivative.
    fn forward(&self, x: &ComplexTensor, swap: Option<usize>) -> ComplexTensor {
        let mut cur = x.clone();
        for d in 0..self.n.len() {
            let m = if swap == Some(d) { &self.dfwd[d] } else { &self.fwd[d] };
            cur = contract_axis(m, self.m[d], self.n[d], &cur, d + 1).expect("shape");
        }
        cur
    }

    fn inverse(&self, y: &ComplexTensor, swap: Option<usize>) -> ComplexTensor {
        let mut cur = y.clone();
        for d in 0..self.n.len() {
            let m = if swap == Some(d) { &self.dinv[d] } else { &self.inv[d] };
            cur = contract_axis(m, self.n[d], self.m[d], &cur, d + 1).expect("shape");
        }
        cur
    }

    /// Adjoint of [`Self::inverse`].
    fn inverse_adjoint(&self, g: &ComplexTensor) -> ComplexTensor {
        let mut cur = g.clone();
        for d in 0..self.n.len() {
            cur = contract_axis(&self.inv_adj[d], self.m[d], self.n[d], &cur, d + 1).expect("shape");
        }
        cur
    }

    /// Adjoint of [`Self::forward`].
    fn forward_adjoint(&self, g: &ComplexTensor) -> ComplexTensor {
        let mut cur = g.clone();
        for d in 0..self.n.len() {
            cur = contract_axis(&self.fwd_adj[d], self.n[d], self.m[d], &cur, d + 1).expect("shape");
        }
        cur
    }
}

/// Per-mode channel mixing `Y[o] = Σ_i W[o,i] ⊙ X[i]`.
fn mix(w: &ComplexTensor, x: &ComplexTensor) -> ComplexTensor {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    let mut shape = x.shape().to_vec();
    shape[0] = co;
    let mut out = ComplexTensor::zeros(&shape);
    let len = x.spatial_len();
    for o in 0..co {
        let dst = out.channel_mut(o);
        for i in 0..ci {
            let wv = &w.data()[(o * ci + i) * len..(o * ci + i + 1) * len];
            for ((d, a), b) in dst.iter_mut().zip(wv).zip(x.channel(i)) {
                *d += a * b;
            }
        }
    }
    out
}

fn check_weights(w: &ComplexTensor, x: &ComplexTensor, modes: &[usize]) -> Result<()> {
    let want: Vec<usize> = [w.shape()[0], x.channels()].into_iter().chain(modes.iter().copied()).collect();
    if w.shape() != want.as_slice() {
        return Err(Error::shape(
            "kernel_integral",
            format!("weights {:?} for input {:?}, expected {want:?}", w.shape(), x.shape()),
        ));
    }
    Ok(())
}

fn modes_of(w: &ComplexTensor) -> Vec<usize> {
    w.shape()[2..].to_vec()
}

fn setup(
    x: &ComplexTensor,
    w: &ComplexTensor,
    alphas: &[f64],
    reference: Option<&[usize]>,
) -> Result<Vec<Arc<FrftPlan>>> {
    let dims = x.spatial().len();
    if w.ndim() != dims + 2 || alphas.len() != dims {
        return Err(Error::shape(
            "kernel_integral",
            format!("{} orders and weights {:?} for input {:?}", alphas.len(), w.shape(), x.shape()),
        ));
    }
    check_weights(w, x, &modes_of(w))?;
    let grid = match reference {
        Some(r) if r.len() != dims => {
            return Err(Error::shape(
                "kernel_integral",
                format!("reference grid {r:?} for input {:?}", x.shape()),
            ))
        }
        Some(r) => r,
        None => x.spatial(),
    };
    grid.iter().map(|&n| plan(n)).collect()
}

/// Transform with `F^α`, keep the central bins, mix channels, transform back.
pub fn kernel_integral(x: &ComplexTensor, alphas: &[f64], w: &ComplexTensor) -> Result<ComplexTensor> {
    kernel_integral_on(x, alphas, w, None)
}

/// As [`kernel_integral`], with the transform taken on a `reference` grid:
/// the input is transferred there band-limited and the result transferred back.
pub fn kernel_integral_on(
    x: &ComplexTensor,
    alphas: &[f64],
    w: &ComplexTensor,
    reference: Option<&[usize]>,
) -> Result<ComplexTensor> {
    let plans = setup(x, w, alphas, reference)?;
    let ops = Operators::build(&plans, alphas, &modes_of(w), x.spatial(), false)?;
    Ok(ops.inverse(&mix(w, &ops.forward(x, None)), None))
}

/// Kernel integral node with inputs `[x, w, α_1, …, α_d]`; each `α` is a `[1]` node.
pub fn kernel_integral_node(tape: &mut Tape, x: NodeId, w: NodeId, alphas: &[NodeId]) -> Result<NodeId> {
    kernel_integral_node_on(tape, x, w, alphas, None)
}

pub fn kernel_integral_node_on(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    alphas: &[NodeId],
    reference: Option<&[usize]>,
) -> Result<NodeId> {
    let vx = tape.value(x).clone();
    let vw = tape.value(w).clone();
    let a: Vec<f64> = alphas.iter().map(|&id| tape.value(id).data()[0].re).collect();
    let plans = setup(&vx, &vw, &a, reference)?;
    let grad = tape.grad_enabled();
    let ops = Operators::build(&plans, &a, &modes_of(&vw), vx.spatial(), grad)?;
    let spec = ops.forward(&vx, None);
    let mixed = mix(&vw, &spec);
    let v = ops.inverse(&mixed, None);
    let mut inputs = vec![x, w];
    inputs.extend_from_slice(alphas);
    let back = grad.then(|| {
        Box::new(move |g: &ComplexTensor| {
            let g_y = ops.inverse_adjoint(g);
            let (co, ci) = (vw.shape()[0], vw.shape()[1]);
            let len = spec.spatial_len();
            let mut gw = ComplexTensor::zeros(vw.shape());
            let mut g_spec = ComplexTensor::zeros(spec.shape());
            for o in 0..co {
                for i in 0..ci {
                    let range = (o * ci + i) * len..(o * ci + i + 1) * len;
                    let wv = &vw.data()[range.clone()];
                    let gwv = &mut gw.data_mut()[range];
                    for (k, gyo) in g_y.channel(o).iter().enumerate() {
                        gwv[k] = gyo * spec.channel(i)[k].conj();
                    }
                    for ((d, gyo), wk) in g_spec.channel_mut(i).iter_mut().zip(g_y.channel(o)).zip(wv) {
                        *d += wk.conj() * gyo;
                    }
                }
            }
            let gx = ops.forward_adjoint(&g_spec);
            let mut out = vec![gx, gw];
            for d in 0..ops.n.len() {
                let d_spec = ops.forward(&vx, Some(d));
                let d_out = ops.inverse(&mixed, Some(d));
                let ga = g_spec.dot(&d_spec).expect("shape").re + g.dot(&d_out).expect("shape").re;
                out.push(ComplexTensor::scalar(C64::new(ga, 0.0)));
            }
            out
        }) as _
    });
    tape.record("kernel_integral", &inputs, v, back)
}

/// Learnable-order spectral convolution parameters.
#[derive(Clone, Debug)]
pub struct KernelIntegral {
    pub weight: ParamId,
    /// One real scalar order per spatial dimension.
    pub alphas: Vec<ParamId>,
    pub modes: Vec<usize>,
    /// Grid the transform is defined on; `None` uses each input's own grid.
    pub reference: Option<Vec<usize>>,
}

impl KernelIntegral {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        modes: &[usize],
        alpha_init: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if modes.len() != alpha_init.len() || modes.is_empty() || modes.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "{} mode counts and {} orders",
                modes.len(),
                alpha_init.len()
            )));
        }
        let mut shape = vec![channels, channels];
        shape.extend_from_slice(modes);
        let w = complex_glorot(&shape, channels, channels, rng);
        let weight = store.add(&format!("{name}.weights"), w, false)?;
        let axes = ["x", "y"];
        let alphas = alpha_init
            .iter()
            .zip(axes)
            .map(|(&a, ax)| store.add(&format!("{name}.alpha_{ax}"), ComplexTensor::scalar(C64::new(a, 0.0)), true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weight,
            alphas,
            modes: modes.to_vec(),
            reference: None,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let a: Vec<NodeId> = self.alphas.iter().map(|&id| tape.param(store, id)).collect();
        kernel_integral_node_on(tape, x, w, &a, self.reference.as_deref())
    }

    pub fn alpha_values(&self, store: &ParamStore) -> Vec<f64> {
        self.alphas.iter().map(|&id| store.get(id).value.data()[0].re).collect()
    }
}
