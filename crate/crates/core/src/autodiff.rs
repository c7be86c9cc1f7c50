//! Reverse-mode differentiation over coarse tensor operations.
//!
//! Each recorded node stores its forward value and a hand-written adjoint.
//! Gradients follow the real-composite convention: for a complex quantity
//! `z = x + iy` the reported gradient is `∂L/∂x + i·∂L/∂y`. Under this
//! convention a holomorphic map `y = f(z)` pulls back `g_y` to
//! `conj(f'(z))·g_y`, and a linear map `y = A z` pulls back to `Aᴴ g_y`.

use std::collections::HashMap;

use crate::ctensor::{matmul_channels, ComplexTensor, C64, ONE, ZERO};
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ParamId = usize;

/// Maps the upstream gradient of a node to one gradient per input.
pub type Backward = Box<dyn Fn(&ComplexTensor) -> Vec<ComplexTensor>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: ComplexTensor,
    pub grad: ComplexTensor,
    /// Real parameters keep exactly zero imaginary parts in value and grad.
    pub real_constrained: bool,
    /// Frozen parameters receive a zero gradient and are never updated.
    pub frozen: bool,
}

/// Owns every trainable tensor of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, mut value: ComplexTensor, real_constrained: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        if real_constrained {
            value = value.real_part();
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: ComplexTensor::zeros(value.shape()),
            value,
            real_constrained,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| &self.params[id])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id].frozen = frozen;
        if frozen {
            let shape = self.params[id].value.shape().to_vec();
            self.params[id].grad = ComplexTensor::zeros(&shape);
        }
    }

    /// Replace a value, keeping the shape and real constraint.
    pub fn set_value(&mut self, id: ParamId, value: ComplexTensor) -> Result<()> {
        let p = &mut self.params[id];
        p.value.check_same_shape(&value, "set_value")?;
        p.value = if p.real_constrained { value.real_part() } else { value };
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ComplexTensor {
        &mut self.params[id].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = ComplexTensor::zeros(p.value.shape());
        }
    }

    /// Store `grads` (indexed by parameter id), overwriting or accumulating.
    pub fn set_grads(&mut self, grads: &[ComplexTensor], accumulate: bool) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad.check_same_shape(g, "set_grads")?;
            let g = constrain(p, g.clone());
            if accumulate {
                p.grad.add_assign(&g)?;
            } else {
                p.grad = g;
            }
        }
        Ok(())
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.norm())).collect()
    }
}

fn constrain(p: &Parameter, g: ComplexTensor) -> ComplexTensor {
    if p.frozen {
        ComplexTensor::zeros(g.shape())
    } else if p.real_constrained {
        g.real_part()
    } else {
        g
    }
}

struct Node {
    kind: &'static str,
    value: ComplexTensor,
    inputs: Vec<NodeId>,
    backward: Option<Backward>,
    param: Option<ParamId>,
}

/// Append-only record of one forward evaluation.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that keeps values but records no adjoints.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ComplexTensor {
        &self.nodes[id].value
    }

    pub fn kind(&self, id: NodeId) -> &'static str {
        self.nodes[id].kind
    }

    pub fn constant(&mut self, value: ComplexTensor) -> NodeId {
        self.nodes.push(Node {
            kind: "constant",
            value,
            inputs: Vec::new(),
            backward: None,
            param: None,
        });
        self.nodes.len() - 1
    }

    /// Leaf bound to a parameter; its gradient flows back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            kind: "param",
            value: store.get(id).value.clone(),
            inputs: Vec::new(),
            backward: None,
            param: Some(id),
        });
        self.nodes.len() - 1
    }

    /// Record an operation whose forward value was computed by the caller.
    ///
    /// `backward` must return one gradient per input, shaped like that input.
    pub fn record(
        &mut self,
        kind: &'static str,
        inputs: &[NodeId],
        value: ComplexTensor,
        backward: Option<Backward>,
    ) -> Result<NodeId> {
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::InvalidArgument(format!(
                "{kind}: input node {bad} not on tape of {} nodes",
                self.nodes.len()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Numerical(format!("{kind} produced a non-finite value")));
        }
        let backward = if self.grad_enabled { backward } else { None };
        self.nodes.push(Node {
            kind,
            value,
            inputs: inputs.to_vec(),
            backward,
            param: None,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Reverse sweep from a real scalar loss. Does not mutate the tape, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Ok(Gradients { grads: Vec::new() });
        }
        let out = self
            .nodes
            .get(loss)
            .ok_or_else(|| Error::InvalidArgument(format!("loss node {loss} not on tape")))?;
        if out.value.len() != 1 || out.value.data()[0].im != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss must be a real scalar, got shape {:?} value {}",
                out.value.shape(),
                out.value.data()[0]
            )));
        }
        let mut grads: Vec<Option<ComplexTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(ComplexTensor::filled(out.value.shape(), ONE));
        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let input_grads = backward(&g);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.kind);
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of one reverse sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<ComplexTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&ComplexTensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Sum the leaf gradients per parameter, applying real and frozen constraints.
    pub fn param_grads(&self, tape: &Tape, store: &ParamStore) -> Vec<ComplexTensor> {
        let mut out: Vec<ComplexTensor> = store
            .iter()
            .map(|p| ComplexTensor::zeros(p.value.shape()))
            .collect();
        for (id, node) in tape.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, self.get(id)) {
                out[pid].add_assign(g).expect("leaf gradient shape");
            }
        }
        store
            .iter()
            .zip(out)
            .map(|(p, g)| constrain(p, g))
            .collect()
    }
}

// ---- elementary differentiable ops -------------------------------------

pub fn add(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = tape.value(a).add(tape.value(b))?;
    tape.record("add", &[a, b], v, Some(Box::new(|g| vec![g.clone(), g.clone()])))
}

/// Sum of several same-shaped nodes.
pub fn add_many(tape: &mut Tape, xs: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = xs
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("add_many of nothing".into()))?;
    let mut v = tape.value(first).clone();
    for &x in rest {
        v.add_assign(tape.value(x))?;
    }
    let n = xs.len();
    tape.record("add_many", xs, v, Some(Box::new(move |g| vec![g.clone(); n])))
}

pub fn sub(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = tape.value(a).sub(tape.value(b))?;
    tape.record(
        "sub",
        &[a, b],
        v,
        Some(Box::new(|g| vec![g.clone(), g.scale(C64::new(-1.0, 0.0))])),
    )
}

pub fn mul(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (va, vb) = (tape.value(a).clone(), tape.value(b).clone());
    let v = va.mul(&vb)?;
    tape.record(
        "mul",
        &[a, b],
        v,
        Some(Box::new(move |g| {
            vec![
                g.zip_map(&vb, "mul_back", |g, b| g * b.conj()).expect("shape"),
                g.zip_map(&va, "mul_back", |g, a| g * a.conj()).expect("shape"),
            ]
        })),
    )
}

pub fn conj(tape: &mut Tape, a: NodeId) -> Result<NodeId> {
    let v = tape.value(a).conj();
    tape.record("conj", &[a], v, Some(Box::new(|g| vec![g.conj()])))
}

pub fn scale(tape: &mut Tape, a: NodeId, s: C64) -> Result<NodeId> {
    let v = tape.value(a).scale(s);
    tape.record("scale", &[a], v, Some(Box::new(move |g| vec![g.scale(s.conj())])))
}

/// Keep the real part (imaginary parts set to zero).
pub fn real_part(tape: &mut Tape, a: NodeId) -> Result<NodeId> {
    let v = tape.value(a).real_part();
    tape.record("real_part", &[a], v, Some(Box::new(|g| vec![g.real_part()])))
}

/// Sum of all elements as a `[1]` tensor.
pub fn sum(tape: &mut Tape, a: NodeId) -> Result<NodeId> {
    let shape = tape.value(a).shape().to_vec();
    let v = ComplexTensor::scalar(tape.value(a).sum());
    tape.record(
        "sum",
        &[a],
        v,
        Some(Box::new(move |g| vec![ComplexTensor::filled(&shape, g.data()[0])])),
    )
}

/// `Re Σ conj(c)·a` for a constant `c`: a real scalar linear functional.
pub fn project_real(tape: &mut Tape, a: NodeId, c: &ComplexTensor) -> Result<NodeId> {
    let v = ComplexTensor::scalar(C64::new(c.dot(tape.value(a))?.re, 0.0));
    let c = c.clone();
    tape.record(
        "project_real",
        &[a],
        v,
        Some(Box::new(move |g| vec![c.scale(C64::new(g.data()[0].re, 0.0))])),
    )
}

/// `Σ |a|²` as a real scalar.
pub fn sum_squares(tape: &mut Tape, a: NodeId) -> Result<NodeId> {
    let va = tape.value(a).clone();
    let v = ComplexTensor::scalar(C64::new(va.norm_sqr(), 0.0));
    tape.record(
        "sum_squares",
        &[a],
        v,
        Some(Box::new(move |g| vec![va.scale(C64::new(2.0 * g.data()[0].re, 0.0))])),
    )
}

/// Channel mixing with a weight node `[C_out, C_in]`.
pub fn matmul_channels_node(tape: &mut Tape, w: NodeId, x: NodeId) -> Result<NodeId> {
    let (vw, vx) = (tape.value(w).clone(), tape.value(x).clone());
    let v = matmul_channels(&vw, &vx)?;
    tape.record(
        "matmul_channels",
        &[w, x],
        v,
        Some(Box::new(move |g| {
            let (co, ci) = (vw.shape()[0], vw.shape()[1]);
            let n = vx.spatial_len();
            let mut gw = ComplexTensor::zeros(vw.shape());
            for o in 0..co {
                for i in 0..ci {
                    let acc: C64 = g.channel(o).iter().zip(vx.channel(i)).map(|(a, b)| a * b.conj()).sum();
                    gw.data_mut()[o * ci + i] = acc;
                }
            }
            let mut wh = ComplexTensor::zeros(&[ci, co]);
            for o in 0..co {
                for i in 0..ci {
                    wh.data_mut()[i * co + o] = vw.data()[o * ci + i].conj();
                }
            }
            let gx = matmul_channels(&wh, g).expect("shape");
            debug_assert_eq!(gx.spatial_len(), n);
            vec![gw, gx]
        })),
    )
}

/// Per-channel `x·scale[c] + shift[c]` with constant real coefficients.
pub fn affine_channels(tape: &mut Tape, x: NodeId, scale: &[f64], shift: &[f64]) -> Result<NodeId> {
    let vx = tape.value(x);
    if scale.len() != vx.channels() || shift.len() != vx.channels() {
        return Err(Error::shape(
            "affine_channels",
            format!("{} coefficients for {:?}", scale.len(), vx.shape()),
        ));
    }
    let mut v = vx.clone();
    for c in 0..v.channels() {
        let (s, b) = (scale[c], shift[c]);
        v.channel_mut(c).iter_mut().for_each(|z| *z = *z * s + b);
    }
    let scale = scale.to_vec();
    tape.record(
        "affine_channels",
        &[x],
        v,
        Some(Box::new(move |g| {
            let mut gx = g.clone();
            for (c, &s) in scale.iter().enumerate() {
                gx.channel_mut(c).iter_mut().for_each(|z| *z *= s);
            }
            vec![gx]
        })),
    )
}

pub fn concat_channels(tape: &mut Tape, xs: &[NodeId]) -> Result<NodeId> {
    let parts: Vec<&ComplexTensor> = xs.iter().map(|&x| tape.value(x)).collect();
    let counts: Vec<usize> = parts.iter().map(|p| p.channels()).collect();
    let v = ComplexTensor::concat_channels(&parts)?;
    tape.record(
        "concat_channels",
        xs,
        v,
        Some(Box::new(move |g| {
            let mut start = 0;
            counts
                .iter()
                .map(|&c| {
                    let part = g.slice_channels(start, c).expect("shape");
                    start += c;
                    part
                })
                .collect()
        })),
    )
}

/// Squared relative error `‖pred − target‖² / ‖target‖²` for one sample.
pub fn relative_l2_node(tape: &mut Tape, pred: NodeId, target: &ComplexTensor) -> Result<NodeId> {
    let p = tape.value(pred);
    p.check_same_shape(target, "relative_l2")?;
    let denom = target.norm_sqr();
    if denom <= 0.0 {
        return Err(Error::InvalidArgument("relative L2 against a zero-norm target".into()));
    }
    let diff = p.sub(target)?;
    let v = ComplexTensor::scalar(C64::new(diff.norm_sqr() / denom, 0.0));
    tape.record(
        "relative_l2",
        &[pred],
        v,
        Some(Box::new(move |g| vec![diff.scale(C64::new(2.0 * g.data()[0].re / denom, 0.0))])),
    )
}

// ---- gradient checking -------------------------------------------------

fn eval_loss<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::inference();
    let loss = f(&mut tape, store)?;
    Ok(tape.value(loss).data()[0].re)
}

/// Compare tape gradients with central finite differences on every
/// non-frozen parameter entry (real and imaginary parts separately).
/// Returns the largest `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn gradcheck<F>(f: F, store: &mut ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    gradcheck_sampled(f, store, eps, usize::MAX)
}

/// Like [`gradcheck`] but probes at most `max_entries` evenly spaced entries per parameter.
pub fn gradcheck_sampled<F>(f: F, store: &mut ParamStore, eps: f64, max_entries: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let analytic = tape.backward(loss)?.param_grads(&tape, store);
    drop(tape);

    let mut worst: f64 = 0.0;
    for pid in 0..store.len() {
        let p = store.get(pid);
        if p.frozen {
            continue;
        }
        let n = p.value.len();
        let parts: &[bool] = if p.real_constrained { &[false] } else { &[false, true] };
        let step = n.div_ceil(max_entries.max(1)).max(1);
        for idx in (0..n).step_by(step) {
            for &imag in parts {
                let original = store.get(pid).value.data()[idx];
                let delta = if imag { C64::new(0.0, eps) } else { C64::new(eps, 0.0) };
                store.value_mut(pid).data_mut()[idx] = original + delta;
                let plus = eval_loss(&f, store)?;
                store.value_mut(pid).data_mut()[idx] = original - delta;
                let minus = eval_loss(&f, store)?;
                store.value_mut(pid).data_mut()[idx] = original;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[pid].data()[idx];
                let a = if imag { a.im } else { a.re };
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}

/// Zero-valued gradient placeholder of a given shape.
pub fn zeros_like(t: &ComplexTensor) -> ComplexTensor {
    ComplexTensor::filled(t.shape(), ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> ComplexTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexTensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn add_then_sum_gives_unit_grads() {
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[3], 1), false).unwrap();
        let b = store.add("b", random(&[3], 2), false).unwrap();
        let mut tape = Tape::new();
        let (na, nb) = (tape.param(&store, a), tape.param(&store, b));
        let s = add(&mut tape, na, nb).unwrap();
        let r = real_part(&mut tape, s).unwrap();
        let l = sum(&mut tape, r).unwrap();
        let g = tape.backward(l).unwrap().param_grads(&tape, &store);
        for gi in &g {
            assert!(gi.data().iter().all(|z| *z == ONE));
        }
    }

    #[test]
    fn modulus_squared_gradient() {
        let mut store = ParamStore::new();
        let z = store.add("z", ComplexTensor::scalar(C64::new(3.0, 4.0)), false).unwrap();
        let mut tape = Tape::new();
        let nz = tape.param(&store, z);
        let cz = conj(&mut tape, nz).unwrap();
        let prod = mul(&mut tape, nz, cz).unwrap();
        let loss = real_part(&mut tape, prod).unwrap();
        let g = tape.backward(loss).unwrap().param_grads(&tape, &store);
        assert_eq!(g[z].data()[0], C64::new(6.0, 8.0));

        let err = gradcheck(
            |t, s| {
                let nz = t.param(s, z);
                let cz = conj(t, nz)?;
                let p = mul(t, nz, cz)?;
                real_part(t, p)
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn real_part_of_product_matches_finite_differences() {
        let mut store = ParamStore::new();
        let z = store.add("z", random(&[4], 3), false).unwrap();
        let w = store.add("w", random(&[4], 4), false).unwrap();
        let err = gradcheck(
            |t, s| {
                let (nz, nw) = (t.param(s, z), t.param(s, w));
                let p = mul(t, nz, nw)?;
                let r = real_part(t, p)?;
                sum(t, r)
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
        // Re(z w) = x_z x_w − y_z y_w ⇒ ∂/∂z = conj(w)
        let mut tape = Tape::new();
        let (nz, nw) = (tape.param(&store, z), tape.param(&store, w));
        let p = mul(&mut tape, nz, nw).unwrap();
        let r = real_part(&mut tape, p).unwrap();
        let l = sum(&mut tape, r).unwrap();
        let g = tape.backward(l).unwrap().param_grads(&tape, &store);
        assert!(g[z].max_abs_diff(&store.get(w).value.conj()).unwrap() < 1e-15);
    }

    #[test]
    fn re_of_z_and_real_sum() {
        let mut store = ParamStore::new();
        let z = store.add("z", ComplexTensor::scalar(C64::new(0.3, -2.0)), false).unwrap();
        let t = store.add("t", ComplexTensor::from_real(vec![5], &[1.0; 5]).unwrap(), true).unwrap();
        let mut tape = Tape::new();
        let nz = tape.param(&store, z);
        let nt = tape.param(&store, t);
        let rz = real_part(&mut tape, nz).unwrap();
        let st = sum(&mut tape, nt).unwrap();
        let l = add(&mut tape, rz, st).unwrap();
        let g = tape.backward(l).unwrap().param_grads(&tape, &store);
        assert_eq!(g[z].data()[0], ONE);
        assert!(g[t].data().iter().all(|v| *v == ONE));
    }

    #[test]
    fn empty_tape_and_bad_inputs() {
        let tape = Tape::new();
        assert!(tape.backward(0).unwrap().get(0).is_none());
        let mut tape = Tape::new();
        assert!(tape.record("bogus", &[3], ComplexTensor::zeros(&[1]), None).is_err());
        let c = tape.constant(ComplexTensor::zeros(&[2]));
        assert!(tape.backward(c).is_err());
        let c = tape.constant(ComplexTensor::scalar(C64::new(1.0, 1.0)));
        assert!(tape.backward(c).is_err());
    }

    #[test]
    fn repeated_backward_is_stable() {
        let mut store = ParamStore::new();
        let z = store.add("z", random(&[6], 5), false).unwrap();
        let mut tape = Tape::new();
        let nz = tape.param(&store, z);
        let l = sum_squares(&mut tape, nz).unwrap();
        let g1 = tape.backward(l).unwrap().param_grads(&tape, &store);
        let g2 = tape.backward(l).unwrap().param_grads(&tape, &store);
        assert_eq!(g1, g2);
        store.set_grads(&g1, false).unwrap();
        store.set_grads(&g2, false).unwrap();
        assert_eq!(store.get(z).grad, g1[z]);
        store.set_grads(&g2, true).unwrap();
        assert_eq!(store.get(z).grad, g1[z].scale(C64::new(2.0, 0.0)));
    }

    #[test]
    fn affine_maps_pass_gradcheck() {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[2, 5], 6), false).unwrap();
        let y = store.add("y", random(&[2, 5], 7), false).unwrap();
        let w = store.add("w", random(&[3, 2], 8), false).unwrap();
        let c = random(&[3, 5], 9);
        let (a, b) = (C64::new(0.7, -1.2), C64::new(-0.4, 0.9));
        let err = gradcheck(
            |t, s| {
                let (nx, ny, nw) = (t.param(s, x), t.param(s, y), t.param(s, w));
                let ax = scale(t, nx, a)?;
                let by = scale(t, ny, b)?;
                let sum_xy = add(t, ax, by)?;
                let mixed = matmul_channels_node(t, nw, sum_xy)?;
                project_real(t, mixed, &c)
            },
            &mut store,
            // the loss is linear in each entry, so a large step is exact
            1e-2,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn real_constrained_and_frozen() {
        let mut store = ParamStore::new();
        let r = store.add("r", random(&[3], 1), true).unwrap();
        assert_eq!(store.get(r).value.max_abs_imag(), 0.0);
        let f = store.add("f", random(&[3], 2), false).unwrap();
        store.set_frozen(f, true);
        let mut tape = Tape::new();
        let (nr, nf) = (tape.param(&store, r), tape.param(&store, f));
        let p = mul(&mut tape, nr, nf).unwrap();
        let l = sum_squares(&mut tape, p).unwrap();
        let g = tape.backward(l).unwrap().param_grads(&tape, &store);
        assert_eq!(g[r].max_abs_imag(), 0.0);
        assert!(g[r].norm() > 0.0);
        assert_eq!(g[f].norm(), 0.0);
        assert!(store.add("r", random(&[1], 3), false).is_err());
    }

    #[test]
    fn concat_and_affine_gradcheck() {
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[2, 4], 1), false).unwrap();
        let b = store.add("b", random(&[1, 4], 2), false).unwrap();
        let c = random(&[3, 4], 3);
        let target = random(&[3, 4], 4);
        let err = gradcheck(
            |t, s| {
                let (na, nb) = (t.param(s, a), t.param(s, b));
                let cat = concat_channels(t, &[na, nb])?;
                let aff = affine_channels(t, cat, &[2.0, -1.0, 0.5], &[0.1, 0.2, 0.3])?;
                let l1 = project_real(t, aff, &c)?;
                let l2 = relative_l2_node(t, aff, &target)?;
                add(t, l1, l2)
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }
}
