use candle_core::{Module, Tensor, D};

use super::layers::{linear, Ctx};
use super::params::ParamBuilder;
use crate::error::Result;

/// `softmax(QKᵀ/√d)·V` over the last two axes. Returns `(output, weights)`.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let d = q.dim(D::Minus1)?;
    let scores = (q.contiguous()?.matmul(&k.t()?.contiguous()?)? / (d as f64).sqrt())?;
    let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
    let out = weights.matmul(&v.contiguous()?)?;
    Ok((out, weights))
}

/// Multi-head attention with separate query/key/value projections.
#[derive(Clone, Debug)]
pub struct Attention {
    name: String,
    q_proj: candle_nn::Linear,
    k_proj: candle_nn::Linear,
    v_proj: candle_nn::Linear,
    out_proj: candle_nn::Linear,
    num_heads: usize,
}

impl Attention {
    pub fn new(
        pb: &ParamBuilder,
        dim: usize,
        internal_dim: usize,
        num_heads: usize,
    ) -> Result<Self> {
        if !internal_dim.is_multiple_of(num_heads) {
            return Err(crate::Error::InvalidArgument(format!(
                "attention width {internal_dim} not divisible by {num_heads} heads"
            )));
        }
        Ok(Self {
            name: pb.prefix().to_string(),
            q_proj: linear(&pb.pp("q_proj"), dim, internal_dim)?,
            k_proj: linear(&pb.pp("k_proj"), dim, internal_dim)?,
            v_proj: linear(&pb.pp("v_proj"), dim, internal_dim)?,
            out_proj: linear(&pb.pp("out_proj"), internal_dim, dim)?,
            num_heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        Ok(x.reshape((b, n, self.num_heads, c / self.num_heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `q: B×Nq×C`, `k, v: B×Nk×C` → `B×Nq×C`.
    pub fn forward(&self, q: &Tensor, k: &Tensor, v: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let q = self.split_heads(&self.q_proj.forward(q)?)?;
        let k = self.split_heads(&self.k_proj.forward(k)?)?;
        let v = self.split_heads(&self.v_proj.forward(v)?)?;
        let (out, weights) = scaled_dot_product_attention(&q, &k, &v)?;
        if let Some(probe) = ctx.probe {
            probe.record(&self.name, &weights)?;
        }
        let (b, h, n, c) = out.dims4()?;
        let out = out.transpose(1, 2)?.reshape((b, n, h * c))?;
        Ok(self.out_proj.forward(&out)?)
    }
}
