//! Neural building blocks.

pub mod activation;
pub mod conv;
pub mod spectral;
pub mod unet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{add_many, NodeId, ParamStore, Tape};
use crate::ctensor::{ComplexTensor, C64};
use crate::error::Result;

pub use activation::{
    alias_free_activation, alias_free_stages, cgelu, default_filter, downsample2, gelu, gelu_derivative, upsample2,
    Activation, ResampleFilter,
};
pub use conv::{conv_forward, ComplexConv, ConvSpec};
pub use spectral::{kernel_integral, retained_bins, KernelIntegral};
pub use unet::ComplexUnet;

/// Rayleigh modulus with `σ² = 1/(fan_in + fan_out)` and uniform phase.
pub fn complex_glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> ComplexTensor {
    let sigma = (1.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let modulus = sigma * (-2.0 * u.ln()).sqrt();
            let phase = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            C64::from_polar(modulus, phase)
        })
        .collect();
    ComplexTensor::new(shape.to_vec(), data).expect("shape")
}

/// Normal with variance `2/(fan_in + fan_out)`, zero imaginary parts.
pub fn real_glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> ComplexTensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            C64::new(std * z, 0.0)
        })
        .collect();
    ComplexTensor::new(shape.to_vec(), data).expect("shape")
}

/// `act(W·x + K(α)x + UNET(x))`, with W and the UNET optional.
#[derive(Clone, Debug)]
pub struct SpectralBlock {
    pub pointwise: Option<ComplexConv>,
    pub kernel: KernelIntegral,
    pub unet: Option<ComplexUnet>,
}

/// Pre-activation branch outputs of a spectral block.
pub struct BranchNodes {
    pub pointwise: Option<NodeId>,
    pub kernel: NodeId,
    pub unet: Option<NodeId>,
    pub sum: NodeId,
}

impl SpectralBlock {
    pub fn branches(&self, tape: &mut Tape, store: &ParamStore, act: &Activation, x: NodeId) -> Result<BranchNodes> {
        let kernel = self.kernel.forward(tape, store, x)?;
        let pointwise = self.pointwise.as_ref().map(|w| w.forward(tape, store, x)).transpose()?;
        let unet = self.unet.as_ref().map(|u| u.forward(tape, store, act, x)).transpose()?;
        let parts: Vec<NodeId> = [Some(kernel), pointwise, unet].into_iter().flatten().collect();
        let sum = if parts.len() == 1 { kernel } else { add_many(tape, &parts)? };
        Ok(BranchNodes {
            pointwise,
            kernel,
            unet,
            sum,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, act: &Activation, x: NodeId) -> Result<NodeId> {
        let b = self.branches(tape, store, act, x)?;
        act.node(tape, b.sum)
    }
}
