//! Complex encoder/decoder with skip connections.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{concat_channels, NodeId, ParamStore, Tape};
use crate::ctensor::ComplexTensor;
use crate::error::{Error, Result};
use crate::layers::activation::{default_filter, downsample2_node, upsample2_node, Activation, ResampleFilter};
use crate::layers::conv::{ComplexConv, ConvSpec};

#[derive(Clone, Debug)]
pub struct ComplexUnet {
    encoders: Vec<ComplexConv>,
    decoders: Vec<ComplexConv>,
    head: ComplexConv,
    filter: Arc<ResampleFilter>,
    pub levels: usize,
}

impl ComplexUnet {
    /// Each encoder stage doubles the channel count and halves the extent.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        levels: usize,
        spatial_dims: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = |c_in, c_out, kernel| ConvSpec {
            c_in,
            c_out,
            kernel,
            spatial_dims,
            bias: true,
            real: false,
        };
        let mut encoders = Vec::new();
        let mut c = channels;
        for l in 0..levels {
            encoders.push(ComplexConv::new(store, &format!("{name}.enc{l}"), conv(c, 2 * c, 3), rng)?);
            c *= 2;
        }
        let mut decoders = Vec::new();
        for l in (0..levels).rev() {
            // input: upsampled deeper features (c) concatenated with the skip (c)
            let out = c / 2;
            decoders.push(ComplexConv::new(store, &format!("{name}.dec{l}"), conv(2 * c, out, 3), rng)?);
            c = out;
        }
        let head = ComplexConv::new(store, &format!("{name}.head"), conv(channels, channels, 1), rng)?;
        Ok(Self {
            encoders,
            decoders,
            head,
            filter: default_filter(),
            levels,
        })
    }

    pub fn check_extent(&self, x: &ComplexTensor) -> Result<()> {
        let f = 1usize << self.levels;
        for &n in x.spatial() {
            if n % f != 0 || n / f < 2 {
                return Err(Error::shape(
                    "complex_unet",
                    format!("extent {n} must be a multiple of {f} with at least 2 coarse points"),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, act: &Activation, x: NodeId) -> Result<NodeId> {
        self.check_extent(tape.value(x))?;
        let mut skips = Vec::with_capacity(self.levels);
        let mut cur = x;
        for enc in &self.encoders {
            let h = enc.forward(tape, store, cur)?;
            let h = act.node(tape, h)?;
            skips.push(h);
            cur = downsample2_node(tape, &self.filter, h)?;
        }
        for dec in &self.decoders {
            let skip = skips.pop().expect("one skip per level");
            let up = upsample2_node(tape, &self.filter, cur)?;
            let cat = concat_channels(tape, &[up, skip])?;
            let h = dec.forward(tape, store, cat)?;
            cur = act.node(tape, h)?;
        }
        self.head.forward(tape, store, cur)
    }
}
