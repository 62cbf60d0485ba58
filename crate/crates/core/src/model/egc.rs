//! Edge branch (multi-stage sideouts fused by a learned weighting map) and the
//! edge-gated non-local refinement of the coarse assessment.

use candle_core::{Module, Tensor, D};

use super::asf::AggregatedSemanticFilter;
use super::config::ModelConfig;
use super::encoder::FeaturePyramid;
use super::layers::{gelu, sigmoid, Conv2d, ConvSpec, ConvTranspose2d, Ctx};
use super::params::ParamBuilder;
use crate::error::{Error, Result};

/// Edge logits: fused map plus the four sideouts and their weights.
#[derive(Clone, Debug)]
pub struct EdgeLogits {
    /// `B×1×H×W`.
    pub fused: Tensor,
    /// `B×4×H×W`, channel `i` from encoder stage `i+1`.
    pub sideouts: Tensor,
    /// `B×4×H×W`.
    pub weights: Tensor,
}

/// Two transposed convolutions with stride 4 each: `H/16` → `H`, one channel out.
#[derive(Clone, Debug)]
struct SideoutHead {
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
}

impl SideoutHead {
    fn new(pb: &ParamBuilder, c_in: usize) -> Result<Self> {
        let mid = (c_in / 2).max(1);
        Ok(Self {
            up1: ConvTranspose2d::new(&pb.pp("up1"), c_in, mid, 4)?,
            up2: ConvTranspose2d::new(&pb.pp("up2"), mid, 1, 4)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.up2.forward(&gelu(&self.up1.forward(x)?)?)?)
    }
}

/// Channel-wise multiply and sum: `Σ_c E_ms[c] · W[c]`.
pub fn fuse_sideouts(sideouts: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok((sideouts * weights)?.sum_keepdim(1)?)
}

#[derive(Clone, Debug)]
pub struct EdgeBranch {
    heads: Vec<SideoutHead>,
    pub asf: AggregatedSemanticFilter,
    weight_convs: [Conv2d; 3],
}

pub const WEIGHT_NET_WIDTHS: [usize; 4] = [1, 8, 8, 4];

impl EdgeBranch {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let heads = (0..4)
            .map(|i| SideoutHead::new(&pb.pp(format!("sideouts.{i}")), cfg.d_im))
            .collect::<Result<_>>()?;
        let w = WEIGHT_NET_WIDTHS;
        let conv = |i: usize| {
            Conv2d::new(
                &pb.pp(format!("weight_net.{i}")),
                w[i],
                w[i + 1],
                ConvSpec::square(1, 0),
            )
        };
        Ok(Self {
            heads,
            asf: AggregatedSemanticFilter::new(&pb.pp("asf"), cfg.d_im)?,
            weight_convs: [conv(0)?, conv(1)?, conv(2)?],
        })
    }

    pub fn forward(&self, pyr: &FeaturePyramid, ctx: &Ctx) -> Result<EdgeLogits> {
        let e1 = self.heads[0].forward(&pyr.stages[0])?;
        let e2 = self.heads[1].forward(&pyr.stages[1])?;
        let e3 = self.heads[2].forward(&pyr.stages[2])?;
        let e4 = self.heads[3].forward(&self.asf.forward(&pyr.stages[3], ctx)?)?;
        let w = gelu(&self.weight_convs[0].forward(&e4)?)?;
        let w = gelu(&self.weight_convs[1].forward(&w)?)?;
        let weights = self.weight_convs[2].forward(&w)?;
        let sideouts = Tensor::cat(&[e1, e2, e3, e4], 1)?;
        let fused = fuse_sideouts(&sideouts, &weights)?;
        Ok(EdgeLogits {
            fused,
            sideouts,
            weights,
        })
    }
}

/// Embedded-Gaussian non-local block with pooled keys/values and a residual path.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    theta: Conv2d,
    phi: Conv2d,
    g: Conv2d,
    out: Conv2d,
    subsample: usize,
}

impl NonLocalBlock {
    pub fn new(pb: &ParamBuilder, channels: usize, subsample: usize) -> Result<Self> {
        let inner = (channels / 2).max(1);
        let c1 = |name: &str, i, o| Conv2d::new(&pb.pp(name), i, o, ConvSpec::square(1, 0));
        Ok(Self {
            theta: c1("theta", channels, inner)?,
            phi: c1("phi", channels, inner)?,
            g: c1("g", channels, inner)?,
            out: c1("out", inner, channels)?,
            subsample,
        })
    }

    /// Returns the refined map and the `B×HW×(HW/s²)` affinity.
    pub fn forward_with_affinity(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, _, h, w) = x.dims4()?;
        let s = self.subsample;
        let theta = self
            .theta
            .forward(x)?
            .flatten_from(2)?
            .transpose(1, 2)?
            .contiguous()?;
        let phi = self
            .phi
            .forward(x)?
            .max_pool2d(s)?
            .flatten_from(2)?
            .contiguous()?;
        let g = self
            .g
            .forward(x)?
            .max_pool2d(s)?
            .flatten_from(2)?
            .transpose(1, 2)?
            .contiguous()?;
        let affinity = candle_nn::ops::softmax(&theta.matmul(&phi)?, D::Minus1)?;
        let y = affinity.matmul(&g)?;
        let inner = y.dim(2)?;
        let y = y.transpose(1, 2)?.reshape((b, inner, h, w))?;
        Ok(((x + self.out.forward(&y)?)?, affinity))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_affinity(x)?.0)
    }
}

/// `A = NL(sigmoid(conv(E)) ⊙ conv(A₁))`.
#[derive(Clone, Debug)]
pub struct Refiner {
    edge_conv: Conv2d,
    assess_conv: Conv2d,
    pub nonlocal: NonLocalBlock,
}

/// Intermediates of a refinement pass.
#[derive(Clone, Debug)]
pub struct RefineParts {
    pub gate: Tensor,
    pub gated: Tensor,
    pub affinity: Tensor,
    pub output: Tensor,
}

impl Refiner {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            edge_conv: Conv2d::new(&pb.pp("edge_conv"), 1, 1, ConvSpec::square(3, 1))?,
            assess_conv: Conv2d::new(&pb.pp("assess_conv"), 4, 4, ConvSpec::square(3, 1))?,
            nonlocal: NonLocalBlock::new(&pb.pp("nonlocal"), 4, cfg.nonlocal_subsample)?,
        })
    }

    pub fn forward_parts(&self, a1: &Tensor, edge: &Tensor) -> Result<RefineParts> {
        let (ba, ca, ha, wa) = a1.dims4()?;
        let (be, ce, he, we) = edge.dims4()?;
        if ba != be || ca != 4 || ce != 1 || (ha, wa) != (he, we) {
            return Err(Error::Shape {
                expected: format!("A1 Bx4x{ha}x{wa} with E Bx1x{ha}x{wa}"),
                actual: format!("A1 {ba}x{ca}x{ha}x{wa}, E {be}x{ce}x{he}x{we}"),
            });
        }
        let gate = sigmoid(&self.edge_conv.forward(edge)?)?;
        let gated = self.assess_conv.forward(a1)?.broadcast_mul(&gate)?;
        let (output, affinity) = self.nonlocal.forward_with_affinity(&gated)?;
        Ok(RefineParts {
            gate,
            gated,
            affinity,
            output,
        })
    }

    pub fn forward(&self, a1: &Tensor, edge: &Tensor) -> Result<Tensor> {
        Ok(self.forward_parts(a1, edge)?.output)
    }
}
