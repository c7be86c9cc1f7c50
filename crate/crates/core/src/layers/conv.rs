//! Circular same-padded complex convolutions with kernel size 1 or 3.

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::ctensor::{ComplexTensor, C64, ZERO};
use crate::error::{Error, Result};
use crate::layers::{complex_glorot, real_glorot};

/// `dst[j] += w·src[(j + shift) mod n]`.
fn axpy_shifted(dst: &mut [C64], src: &[C64], w: C64, shift: isize) {
    let n = src.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let (head, tail) = dst.split_at_mut(n - s);
    for (d, v) in head.iter_mut().zip(&src[s..]) {
        *d += w * v;
    }
    for (d, v) in tail.iter_mut().zip(&src[..s]) {
        *d += w * v;
    }
}

/// `Σ_j g[j]·conj(src[(j + shift) mod n])`.
fn dot_shifted(g: &[C64], src: &[C64], shift: isize) -> C64 {
    let n = src.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let mut acc = ZERO;
    for (a, b) in g[..n - s].iter().zip(&src[s..]) {
        acc += a * b.conj();
    }
    for (a, b) in g[n - s..].iter().zip(&src[..s]) {
        acc += a * b.conj();
    }
    acc
}

/// Spatial extents as (rows, cols) with 1D fields treated as a single row.
fn plane(x: &ComplexTensor) -> Result<(usize, usize)> {
    match x.spatial() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape("complex_conv", format!("expected 1 or 2 spatial dims, got {s:?}"))),
    }
}

/// Kernel extents as (rows, cols) and the channel counts.
fn kernel_dims(w: &ComplexTensor, spatial_dims: usize) -> Result<(usize, usize, usize, usize)> {
    match (w.shape(), spatial_dims) {
        ([co, ci, k], 1) => Ok((*co, *ci, 1, *k)),
        ([co, ci, k1, k2], 2) => Ok((*co, *ci, *k1, *k2)),
        (s, d) => Err(Error::shape("complex_conv", format!("kernel {s:?} for {d}-d input"))),
    }
}

/// Circular cross-correlation `y[o,p] = b[o] + Σ w[o,c,d]·x[c, p + d − r]`.
pub fn conv_forward(w: &ComplexTensor, bias: Option<&ComplexTensor>, x: &ComplexTensor) -> Result<ComplexTensor> {
    let (rows, cols) = plane(x)?;
    let (co, ci, kr, kc) = kernel_dims(w, x.spatial().len())?;
    if ci != x.channels() {
        return Err(Error::shape(
            "complex_conv",
            format!("kernel expects {ci} input channels, got {}", x.channels()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::shape("complex_conv", format!("bias {:?} for {co} outputs", b.shape())));
        }
    }
    let (rr, rc) = ((kr / 2) as isize, (kc / 2) as isize);
    let mut shape = x.shape().to_vec();
    shape[0] = co;
    let mut out = ComplexTensor::zeros(&shape);
    let plane_len = rows * cols;
    for o in 0..co {
        let dst = out.channel_mut(o);
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        for c in 0..ci {
            let src = x.channel(c);
            for di in 0..kr {
                for dj in 0..kc {
                    let wv = w.data()[((o * ci + c) * kr + di) * kc + dj];
                    if wv == ZERO {
                        continue;
                    }
                    for i in 0..rows {
                        let si = (i as isize + di as isize - rr).rem_euclid(rows as isize) as usize;
                        axpy_shifted(
                            &mut dst[i * cols..(i + 1) * cols],
                            &src[si * cols..(si + 1) * cols],
                            wv,
                            dj as isize - rc,
                        );
                    }
                }
            }
        }
        debug_assert_eq!(dst.len(), plane_len);
    }
    Ok(out)
}

/// Gradients of [`conv_forward`] with respect to weights, bias and input.
pub fn conv_backward(
    w: &ComplexTensor,
    x: &ComplexTensor,
    g: &ComplexTensor,
) -> (ComplexTensor, ComplexTensor, ComplexTensor) {
    let (rows, cols) = plane(x).expect("checked in forward");
    let (co, ci, kr, kc) = kernel_dims(w, x.spatial().len()).expect("checked in forward");
    let (rr, rc) = ((kr / 2) as isize, (kc / 2) as isize);
    let mut gw = ComplexTensor::zeros(w.shape());
    let mut gx = ComplexTensor::zeros(x.shape());
    let gb_data: Vec<C64> = (0..co).map(|o| g.channel(o).iter().sum()).collect();
    for o in 0..co {
        let go = g.channel(o);
        for c in 0..ci {
            let src = x.channel(c);
            for di in 0..kr {
                for dj in 0..kc {
                    let widx = ((o * ci + c) * kr + di) * kc + dj;
                    let mut acc = ZERO;
                    for i in 0..rows {
                        let si = (i as isize + di as isize - rr).rem_euclid(rows as isize) as usize;
                        acc += dot_shifted(
                            &go[i * cols..(i + 1) * cols],
                            &src[si * cols..(si + 1) * cols],
                            dj as isize - rc,
                        );
                    }
                    gw.data_mut()[widx] = acc;
                    let wc = w.data()[widx].conj();
                    if wc == ZERO {
                        continue;
                    }
                    let gxc = gx.channel_mut(c);
                    for i in 0..rows {
                        // gx[c, p] += conj(w)·g[o, p − d + r]
                        let gi = (i as isize - di as isize + rr).rem_euclid(rows as isize) as usize;
                        axpy_shifted(
                            &mut gxc[i * cols..(i + 1) * cols],
                            &go[gi * cols..(gi + 1) * cols],
                            wc,
                            rc - dj as isize,
                        );
                    }
                }
            }
        }
    }
    let gb = ComplexTensor::new(vec![co], gb_data).expect("shape");
    (gw, gb, gx)
}

/// Convolution as a tape node; `bias` may be absent.
pub fn conv_node(tape: &mut Tape, w: NodeId, bias: Option<NodeId>, x: NodeId) -> Result<NodeId> {
    let (vw, vx) = (tape.value(w).clone(), tape.value(x).clone());
    let v = conv_forward(&vw, bias.map(|b| tape.value(b)), &vx)?;
    let has_bias = bias.is_some();
    let mut inputs = vec![w, x];
    inputs.extend(bias);
    let back = tape.grad_enabled().then(|| {
        Box::new(move |g: &ComplexTensor| {
            let (gw, gb, gx) = conv_backward(&vw, &vx, g);
            if has_bias {
                vec![gw, gx, gb]
            } else {
                vec![gw, gx]
            }
        }) as _
    });
    tape.record("complex_conv", &inputs, v, back)
}

/// Convolution layer whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ComplexConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub spatial_dims: usize,
}

/// Options for [`ComplexConv::new`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub spatial_dims: usize,
    pub bias: bool,
    /// Real-constrained weights and bias with real Glorot init.
    pub real: bool,
}

impl ComplexConv {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        if spec.kernel != 1 && spec.kernel != 3 {
            return Err(Error::InvalidArgument(format!("kernel size must be 1 or 3, got {}", spec.kernel)));
        }
        if !(1..=2).contains(&spec.spatial_dims) || spec.c_in == 0 || spec.c_out == 0 {
            return Err(Error::InvalidArgument(format!("invalid conv spec {spec:?}")));
        }
        let mut shape = vec![spec.c_out, spec.c_in];
        shape.extend(std::iter::repeat(spec.kernel).take(spec.spatial_dims));
        let taps = spec.kernel.pow(spec.spatial_dims as u32);
        let (fan_in, fan_out) = (spec.c_in * taps, spec.c_out * taps);
        let w = if spec.real {
            real_glorot(&shape, fan_in, fan_out, rng)
        } else {
            complex_glorot(&shape, fan_in, fan_out, rng)
        };
        let weight = store.add(&format!("{name}.weight"), w, spec.real)?;
        let bias = if spec.bias {
            Some(store.add(&format!("{name}.bias"), ComplexTensor::zeros(&[spec.c_out]), spec.real)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            c_in: spec.c_in,
            c_out: spec.c_out,
            kernel: spec.kernel,
            spatial_dims: spec.spatial_dims,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        conv_node(tape, w, b, x)
    }

    pub fn apply(&self, store: &ParamStore, x: &ComplexTensor) -> Result<ComplexTensor> {
        conv_forward(
            &store.get(self.weight).value,
            self.bias.map(|b| &store.get(b).value),
            x,
        )
    }
}
