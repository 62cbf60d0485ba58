//! Token/feature decoder producing the coarse four-class assessment.
//!
//! Eight output tokens (four standard, four high-quality) exchange information
//! with the flattened image+prompt features through two two-way attention
//! blocks and one final token→feature attention. The two token groups then
//! act as per-class dynamic filters on two quarter-resolution feature maps,
//! and the two resulting assessments are summed.

use std::f64::consts::PI;

use candle_core::{Module, Tensor, Var};

use super::attention::Attention;
use super::config::ModelConfig;
use super::encoder::FeaturePyramid;
use super::layers::{
    gelu, resize_bilinear, Conv2d, ConvSpec, ConvTranspose2d, Ctx, LayerNorm, LayerNorm2d, Mlp,
};
use super::params::{Init, ParamBuilder};
use crate::error::{Error, Result};

pub const NUM_CLASS_TOKENS: usize = 4;

/// Fixed random-Fourier positional encoding on a square grid.
#[derive(Clone, Debug)]
pub struct PositionEncoding {
    gaussian: Var,
}

impl PositionEncoding {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        let gaussian = pb.buffer((2, dim / 2), "gaussian", Init::Zeros)?;
        let values = pb.normal_values(dim, 1.0);
        let t = Tensor::from_vec(values, (2, dim / 2), &pb.device())?.to_dtype(pb.dtype())?;
        gaussian.set(&t)?;
        Ok(Self { gaussian })
    }

    /// `g*g × dim` encoding of cell centres mapped to [-1, 1].
    pub fn grid(&self, g: usize) -> Result<Tensor> {
        let dev = self.gaussian.device();
        let mut coords = Vec::with_capacity(g * g * 2);
        for y in 0..g {
            for x in 0..g {
                coords.push(2.0 * (x as f64 + 0.5) / g as f64 - 1.0);
                coords.push(2.0 * (y as f64 + 0.5) / g as f64 - 1.0);
            }
        }
        let coords = Tensor::from_vec(coords, (g * g, 2), dev)?.to_dtype(self.gaussian.dtype())?;
        let proj = (coords.matmul(self.gaussian.as_tensor())? * (2.0 * PI))?;
        Ok(Tensor::cat(&[proj.sin()?, proj.cos()?], 1)?)
    }
}

/// Token self-attention, token→feature attention, token MLP, feature→token
/// attention. Each sub-layer is residual and followed by layer norm.
#[derive(Clone, Debug)]
pub struct TwoWayBlock {
    self_attn: Attention,
    norm1: LayerNorm,
    cross_t2i: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
    norm3: LayerNorm,
    cross_i2t: Attention,
    norm4: LayerNorm,
}

impl TwoWayBlock {
    pub fn new(pb: &ParamBuilder, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            self_attn: Attention::new(&pb.pp("self_attn"), dim, dim, heads)?,
            norm1: LayerNorm::new(&pb.pp("norm1"), dim)?,
            cross_t2i: Attention::new(&pb.pp("cross_t2i"), dim, dim, heads)?,
            norm2: LayerNorm::new(&pb.pp("norm2"), dim)?,
            mlp: Mlp::new(&pb.pp("mlp"), &[dim, dim * 4, dim])?,
            norm3: LayerNorm::new(&pb.pp("norm3"), dim)?,
            cross_i2t: Attention::new(&pb.pp("cross_i2t"), dim, dim, heads)?,
            norm4: LayerNorm::new(&pb.pp("norm4"), dim)?,
        })
    }

    /// `tokens: B×N×C`, `features: B×L×C` → updated `(tokens, features)`.
    pub fn forward(
        &self,
        tokens: &Tensor,
        features: &Tensor,
        token_pe: &Tensor,
        feature_pe: &Tensor,
        ctx: &Ctx,
    ) -> Result<(Tensor, Tensor)> {
        let q = tokens.broadcast_add(token_pe)?;
        let t = (tokens + self.self_attn.forward(&q, &q, tokens, ctx)?)?;
        let t = self.norm1.forward(&t)?;

        let q = t.broadcast_add(token_pe)?;
        let k = features.broadcast_add(feature_pe)?;
        let t = (&t + self.cross_t2i.forward(&q, &k, features, ctx)?)?;
        let t = self.norm2.forward(&t)?;

        let t = (&t + self.mlp.forward(&t)?)?;
        let t = self.norm3.forward(&t)?;

        let q = t.broadcast_add(token_pe)?;
        let f = (features + self.cross_i2t.forward(&k, &q, &t, ctx)?)?;
        let f = self.norm4.forward(&f)?;
        Ok((t, f))
    }
}

/// Two stride-2 transposed convolutions: `g` → `4g`.
#[derive(Clone, Debug)]
struct Upscale4 {
    up1: ConvTranspose2d,
    norm: LayerNorm2d,
    up2: ConvTranspose2d,
}

impl Upscale4 {
    fn new(pb: &ParamBuilder, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            up1: ConvTranspose2d::new(&pb.pp("up1"), c_in, c_out, 2)?,
            norm: LayerNorm2d::new(&pb.pp("norm"), c_out)?,
            up2: ConvTranspose2d::new(&pb.pp("up2"), c_out, c_out, 2)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = gelu(&self.norm.forward(&self.up1.forward(x)?)?)?;
        Ok(self.up2.forward(&x)?)
    }
}

/// Intermediate decoder state, exposed for inspection and tests.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// Output tokens after the final attention, `B×8×d_pr` (rows 0–3 standard, 4–7 HQ).
    pub tokens: Tensor,
    /// Updated features `F'`, `B×d_pr×g×g`.
    pub features: Tensor,
    pub a_init: Tensor,
    pub a_hq: Tensor,
}

#[derive(Clone, Debug)]
pub struct MaskDecoder {
    image_size: usize,
    pe: PositionEncoding,
    class_tokens: Tensor,
    hq_tokens: Tensor,
    token_pe: Tensor,
    blocks: Vec<TwoWayBlock>,
    final_attn: Attention,
    final_norm: LayerNorm,
    upscale_features: Upscale4,
    upscale_f1: Upscale4,
    upscale_fim: Upscale4,
    hq_merge1: Conv2d,
    hq_merge_norm: LayerNorm2d,
    hq_merge2: Conv2d,
    class_head: Mlp,
    hq_head: Mlp,
}

impl MaskDecoder {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_pr;
        let std = Init::TruncNormal { std: 0.02 };
        Ok(Self {
            image_size: cfg.image_size,
            pe: PositionEncoding::new(&pb.pp("pe"), d)?,
            class_tokens: pb.get((NUM_CLASS_TOKENS, d), "class_tokens", std)?,
            hq_tokens: pb.get((NUM_CLASS_TOKENS, d), "hq_tokens", std)?,
            token_pe: pb.get((2 * NUM_CLASS_TOKENS, d), "token_pe", std)?,
            blocks: (0..2)
                .map(|i| TwoWayBlock::new(&pb.pp(format!("blocks.{i}")), d, cfg.num_heads))
                .collect::<Result<_>>()?,
            final_attn: Attention::new(&pb.pp("final_attn"), d, d, cfg.num_heads)?,
            final_norm: LayerNorm::new(&pb.pp("final_norm"), d)?,
            upscale_features: Upscale4::new(&pb.pp("upscale_features"), d, d)?,
            upscale_f1: Upscale4::new(&pb.pp("upscale_f1"), cfg.d_im, d)?,
            upscale_fim: Upscale4::new(&pb.pp("upscale_fim"), d, d)?,
            hq_merge1: Conv2d::new(&pb.pp("hq_merge1"), d, d, ConvSpec::square(3, 1))?,
            hq_merge_norm: LayerNorm2d::new(&pb.pp("hq_merge_norm"), d)?,
            hq_merge2: Conv2d::new(&pb.pp("hq_merge2"), d, d, ConvSpec::square(3, 1))?,
            class_head: Mlp::new(&pb.pp("class_head"), &[d, d, d])?,
            hq_head: Mlp::new(&pb.pp("hq_head"), &[d, d, d])?,
        })
    }

    /// `[O; O_hq] + PE` for a batch: `B×8×d_pr`.
    pub fn initial_tokens(&self, batch: usize) -> Result<Tensor> {
        let t = Tensor::cat(&[&self.class_tokens, &self.hq_tokens], 0)?;
        let t = (t + &self.token_pe)?;
        let (n, d) = t.dims2()?;
        Ok(t.unsqueeze(0)?.broadcast_as((batch, n, d))?.contiguous()?)
    }

    pub fn forward(&self, pyr: &FeaturePyramid, prompt: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let st = self.forward_state(pyr, prompt, ctx)?;
        Ok((st.a_init + st.a_hq)?)
    }

    pub fn forward_state(
        &self,
        pyr: &FeaturePyramid,
        prompt: &Tensor,
        ctx: &Ctx,
    ) -> Result<DecoderState> {
        if pyr.f_im.dims() != prompt.dims() {
            return Err(Error::Shape {
                expected: format!("{:?}", pyr.f_im.dims()),
                actual: format!("{:?}", prompt.dims()),
            });
        }
        let (b, d, g, _) = pyr.f_im.dims4()?;
        let dense = (&pyr.f_im + prompt)?;
        let features = dense.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let feature_pe = self.pe.grid(g)?.unsqueeze(0)?;

        let tokens0 = self.initial_tokens(b)?;
        let (mut tokens, mut feats) = (tokens0.clone(), features);
        for block in &self.blocks {
            (tokens, feats) = block.forward(&tokens, &feats, &tokens0, &feature_pe, ctx)?;
        }
        let q = (&tokens + &tokens0)?;
        let k = feats.broadcast_add(&feature_pe)?;
        let tokens = (&tokens + self.final_attn.forward(&q, &k, &feats, ctx)?)?;
        let tokens = self.final_norm.forward(&tokens)?;

        let f_prime = feats.transpose(1, 2)?.reshape((b, d, g, g))?;
        let f_prime_up = gelu(&self.upscale_features.forward(&f_prime)?)?;
        let f_hq =
            (self.upscale_f1.forward(&pyr.stages[0])? + self.upscale_fim.forward(&pyr.f_im)?)?;
        let merged = (&f_hq + &f_prime_up)?;
        let merged = gelu(
            &self
                .hq_merge_norm
                .forward(&self.hq_merge1.forward(&merged)?)?,
        )?;
        let f_hq_prime = self.hq_merge2.forward(&merged)?;

        let o = tokens.narrow(1, 0, NUM_CLASS_TOKENS)?;
        let o_hq = tokens.narrow(1, NUM_CLASS_TOKENS, NUM_CLASS_TOKENS)?;
        let o = self.class_head.forward(&o)?;
        let o_hq = self.hq_head.forward(&o_hq)?;

        let a_init = self.apply_tokens(&o, &f_prime_up)?;
        let a_hq = self.apply_tokens(&o_hq, &f_hq_prime)?;
        Ok(DecoderState {
            tokens,
            features: f_prime,
            a_init,
            a_hq,
        })
    }

    /// Per-class dot product of tokens with a feature map, resized to full resolution.
    fn apply_tokens(&self, tokens: &Tensor, map: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = map.dims4()?;
        let logits = tokens
            .contiguous()?
            .matmul(&map.reshape((b, c, h * w))?.contiguous()?)?
            .reshape((b, NUM_CLASS_TOKENS, h, w))?;
        resize_bilinear(&logits, self.image_size, self.image_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::AttentionProbe;
    use crate::model::{FeaturePyramid, ModelConfig};
    use candle_core::{DType, Device};

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n)
            .map(|i| scale * ((i * 613 % 97) as f32 / 48.0 - 1.0))
            .collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn two_way_block_preserves_shapes_and_rows() {
        let pb = ParamBuilder::new(0, DType::F32, &Device::Cpu);
        let block = TwoWayBlock::new(&pb, 16, 4).unwrap();
        let tokens = ramp(&[1, 8, 16], 1.0);
        let feats = ramp(&[1, 16, 16], 1.0);
        let pe = ramp(&[1, 16, 16], 0.5);
        let probe = AttentionProbe::new();
        let ctx = Ctx::eval().with_probe(&probe);
        let (t, f) = block.forward(&tokens, &feats, &tokens, &pe, &ctx).unwrap();
        assert_eq!((t.dims(), f.dims()), (tokens.dims(), feats.dims()));
        assert!(!probe.records().is_empty());
        assert!(probe.max_deviation() < 1e-6);
    }

    #[test]
    fn toy_decoder_output_and_determinism() {
        let cfg = ModelConfig::toy();
        let build =
            || MaskDecoder::new(&ParamBuilder::new(5, DType::F32, &Device::Cpu), &cfg).unwrap();
        let pyr = FeaturePyramid {
            stages: std::array::from_fn(|i| ramp(&[2, 32, 4, 4], 0.5 + i as f32)),
            f_im: ramp(&[2, 16, 4, 4], 1.0),
        };
        let prompt = ramp(&[2, 16, 4, 4], 0.3);
        let a = build().forward(&pyr, &prompt, &Ctx::eval()).unwrap();
        assert_eq!(a.dims(), &[2, 4, 64, 64]);
        let b = build().forward(&pyr, &prompt, &Ctx::eval()).unwrap();
        assert_eq!(flat(&a), flat(&b));
        assert!(build()
            .forward(&pyr, &ramp(&[2, 16, 2, 2], 1.0), &Ctx::eval())
            .is_err());
    }
}
