//! Aggregated semantic filter applied to the deepest encoder features.
//!
//! Three stages in sequence: channel-then-spatial attention gating, a bank of
//! four asymmetric convolutions whose sigmoids are summed, and three atrous
//! conv/batch-norm/ReLU blocks with dilations 1, 2, 3.

use candle_core::{Module, Tensor};

use super::layers::{sigmoid, BatchNorm2d, Conv2d, ConvSpec, Ctx, Mlp};
use super::params::ParamBuilder;
use crate::error::Result;

const CHANNEL_REDUCTION: usize = 8;

#[derive(Clone, Debug)]
pub struct SpectralSpatialAttention {
    mlp: Mlp,
    spatial: Conv2d,
}

/// Intermediates of [`SpectralSpatialAttention`].
#[derive(Clone, Debug)]
pub struct SpectralSpatialOutput {
    pub channel_gate: Tensor,
    pub f_spr: Tensor,
    pub spatial_gate: Tensor,
    pub f_ss: Tensor,
}

impl SpectralSpatialAttention {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        let hidden = (channels / CHANNEL_REDUCTION).max(1);
        Ok(Self {
            mlp: Mlp::new(&pb.pp("mlp"), &[channels, hidden, channels])?,
            spatial: Conv2d::new(&pb.pp("spatial"), 2, 1, ConvSpec::square(7, 3))?,
        })
    }

    pub fn forward_parts(&self, x: &Tensor) -> Result<SpectralSpatialOutput> {
        let (b, c, _, _) = x.dims4()?;
        let flat = x.flatten_from(2)?;
        let max_desc = flat.max(2)?;
        let avg_desc = flat.mean(2)?;
        let channel_gate =
            sigmoid(&(self.mlp.forward(&max_desc)? + self.mlp.forward(&avg_desc)?)?)?
                .reshape((b, c, 1, 1))?;
        let f_spr = x.broadcast_mul(&channel_gate)?;

        let pooled = Tensor::cat(&[f_spr.max_keepdim(1)?, f_spr.mean_keepdim(1)?], 1)?;
        let spatial_gate = sigmoid(&self.spatial.forward(&pooled)?)?;
        let f_ss = f_spr.broadcast_mul(&spatial_gate)?;
        Ok(SpectralSpatialOutput {
            channel_gate,
            f_spr,
            spatial_gate,
            f_ss,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_parts(x)?.f_ss)
    }
}

/// Kernel shapes and paddings of the four asymmetric branches.
pub const DECOMPOSED_KERNELS: [((usize, usize), (usize, usize)); 4] = [
    ((1, 3), (0, 1)),
    ((3, 1), (1, 0)),
    ((1, 5), (0, 2)),
    ((5, 1), (2, 0)),
];

#[derive(Clone, Debug)]
pub struct SpatialDecomposedFilter {
    branches: Vec<Conv2d>,
}

impl SpatialDecomposedFilter {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        let branches = DECOMPOSED_KERNELS
            .iter()
            .map(|&(kernel, pad)| {
                let spec = ConvSpec {
                    kernel,
                    pad,
                    stride: 1,
                    dilation: 1,
                    bias: true,
                };
                Conv2d::new(
                    &pb.pp(format!("conv{}x{}", kernel.0, kernel.1)),
                    channels,
                    channels,
                    spec,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { branches })
    }

    pub fn branches(&self) -> &[Conv2d] {
        &self.branches
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for conv in &self.branches {
            let s = sigmoid(&conv.forward(x)?)?;
            acc = Some(match acc {
                None => s,
                Some(a) => (a + s)?,
            });
        }
        Ok(acc.expect("four branches"))
    }
}

pub const ATROUS_DILATIONS: [usize; 3] = [1, 2, 3];

#[derive(Clone, Debug)]
pub struct MultiFieldFilter {
    blocks: Vec<(Conv2d, BatchNorm2d)>,
}

impl MultiFieldFilter {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        let blocks = ATROUS_DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let p = pb.pp(format!("blocks.{i}"));
                Ok((
                    Conv2d::new(
                        &p.pp("conv"),
                        channels,
                        channels,
                        ConvSpec::square(3, d).dilation(d),
                    )?,
                    BatchNorm2d::new(&p.pp("bn"), channels)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut x = x.clone();
        for (conv, bn) in &self.blocks {
            x = bn.forward_t(&conv.forward(&x)?, ctx.train)?.relu()?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct AggregatedSemanticFilter {
    pub attention: SpectralSpatialAttention,
    pub decomposed: SpatialDecomposedFilter,
    pub multi_field: MultiFieldFilter,
}

impl AggregatedSemanticFilter {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            attention: SpectralSpatialAttention::new(&pb.pp("attention"), channels)?,
            decomposed: SpatialDecomposedFilter::new(&pb.pp("decomposed"), channels)?,
            multi_field: MultiFieldFilter::new(&pb.pp("multi_field"), channels)?,
        })
    }

    pub fn forward(&self, f4: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let f_ss = self.attention.forward(f4)?;
        let f_sdf = self.decomposed.forward(&f_ss)?;
        self.multi_field.forward(&f_sdf, ctx)
    }
}
