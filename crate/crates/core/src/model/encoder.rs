//! Image encoder (patchify + four transformer stages + neck) and the dense
//! prompt encoder for the unchecked mask.

use candle_core::{Module, Tensor};

use super::attention::Attention;
use super::config::ModelConfig;
use super::layers::{gelu, Conv2d, ConvSpec, Ctx, LayerNorm, LayerNorm2d, Mlp};
use super::params::{Init, ParamBuilder};
use crate::error::{Error, Result};

/// Stage outputs `f1..f4` (each `B×d_im×g×g`) and the neck output `f_im` (`B×d_pr×g×g`).
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub stages: [Tensor; 4],
    pub f_im: Tensor,
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl EncoderBlock {
    fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_im;
        Ok(Self {
            norm1: LayerNorm::new(&pb.pp("norm1"), d)?,
            attn: Attention::new(&pb.pp("attn"), d, d, cfg.num_heads)?,
            norm2: LayerNorm::new(&pb.pp("norm2"), d)?,
            mlp: Mlp::new(&pb.pp("mlp"), &[d, d * cfg.mlp_ratio, d])?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, &h, ctx)?)?;
        let h = self.norm2.forward(&x)?;
        Ok((&x + self.mlp.forward(&h)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    cfg: ModelConfig,
    patch_embed: Conv2d,
    pos_embed: Tensor,
    stages: Vec<Vec<EncoderBlock>>,
    neck_conv1: Conv2d,
    neck_norm1: LayerNorm2d,
    neck_conv2: Conv2d,
    neck_norm2: LayerNorm2d,
}

impl ImageEncoder {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let g = cfg.grid();
        let patch = cfg.patch_size;
        let patch_embed = Conv2d::new(
            &pb.pp("patch_embed"),
            3,
            cfg.d_im,
            ConvSpec::square(patch, 0).stride(patch),
        )?;
        let pos_embed = pb.get(
            (1, g * g, cfg.d_im),
            "pos_embed",
            Init::TruncNormal { std: 0.02 },
        )?;
        let stages = cfg
            .stage_depths
            .iter()
            .enumerate()
            .map(|(s, &depth)| {
                (0..depth)
                    .map(|i| EncoderBlock::new(&pb.pp(format!("stages.{s}.{i}")), cfg))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let neck = pb.pp("neck");
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            pos_embed,
            stages,
            neck_conv1: Conv2d::new(
                &neck.pp("conv1"),
                cfg.d_im,
                cfg.d_pr,
                ConvSpec::square(3, 1).no_bias(),
            )?,
            neck_norm1: LayerNorm2d::new(&neck.pp("norm1"), cfg.d_pr)?,
            neck_conv2: Conv2d::new(
                &neck.pp("conv2"),
                cfg.d_pr,
                cfg.d_pr,
                ConvSpec::square(3, 1).no_bias(),
            )?,
            neck_norm2: LayerNorm2d::new(&neck.pp("norm2"), cfg.d_pr)?,
        })
    }

    /// Per-channel standardization of a `B×3×H×W` tensor in 0..255.
    pub fn normalize(&self, image: &Tensor) -> Result<Tensor> {
        let dev = image.device();
        let mean = Tensor::new(&self.cfg.pixel_mean, dev)?
            .to_dtype(image.dtype())?
            .reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&self.cfg.pixel_std, dev)?
            .to_dtype(image.dtype())?
            .reshape((1, 3, 1, 1))?;
        Ok(image.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    pub fn forward(&self, image: &Tensor, ctx: &Ctx) -> Result<FeaturePyramid> {
        let (_, c, h, w) = image.dims4()?;
        let s = self.cfg.image_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape {
                expected: format!("Bx3x{s}x{s}"),
                actual: format!("Bx{c}x{h}x{w}"),
            });
        }
        let x = self.patch_embed.forward(&self.normalize(image)?)?;
        let (b, d, g, _) = x.dims4()?;
        let mut tokens = x
            .flatten_from(2)?
            .transpose(1, 2)?
            .broadcast_add(&self.pos_embed)?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                tokens = block.forward(&tokens, ctx)?;
            }
            outs.push(tokens.transpose(1, 2)?.reshape((b, d, g, g))?);
        }
        let f4 = &outs[3];
        let f_im = self.neck_conv1.forward(f4)?;
        let f_im = self.neck_norm1.forward(&f_im)?;
        let f_im = self.neck_conv2.forward(&f_im)?;
        let f_im = self.neck_norm2.forward(&f_im)?;
        let stages: [Tensor; 4] = outs.try_into().expect("four stages");
        Ok(FeaturePyramid { stages, f_im })
    }
}

/// Dense prompt encoder: two (3×3 conv, LN, GELU) blocks at stride 2, one more
/// 3×3 conv, then 4×4 average pooling down to the image-embedding grid.
#[derive(Clone, Debug)]
pub struct PromptEncoder {
    image_size: usize,
    conv1: Conv2d,
    norm1: LayerNorm2d,
    conv2: Conv2d,
    norm2: LayerNorm2d,
    conv3: Conv2d,
}

impl PromptEncoder {
    pub fn new(pb: &ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let mid = (cfg.d_pr / 4).max(1);
        Ok(Self {
            image_size: cfg.image_size,
            conv1: Conv2d::new(&pb.pp("conv1"), 1, mid, ConvSpec::square(3, 1).stride(2))?,
            norm1: LayerNorm2d::new(&pb.pp("norm1"), mid)?,
            conv2: Conv2d::new(
                &pb.pp("conv2"),
                mid,
                cfg.d_pr,
                ConvSpec::square(3, 1).stride(2),
            )?,
            norm2: LayerNorm2d::new(&pb.pp("norm2"), cfg.d_pr)?,
            conv3: Conv2d::new(&pb.pp("conv3"), cfg.d_pr, cfg.d_pr, ConvSpec::square(3, 1))?,
        })
    }

    /// Quarter-resolution prompt map, `B×d_pr×H/4×W/4`.
    pub fn forward_quarter(&self, mask: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = mask.dims4()?;
        let s = self.image_size;
        if c != 1 || h != s || w != s {
            return Err(Error::Shape {
                expected: format!("Bx1x{s}x{s}"),
                actual: format!("Bx{c}x{h}x{w}"),
            });
        }
        let x = gelu(&self.norm1.forward(&self.conv1.forward(mask)?)?)?;
        let x = gelu(&self.norm2.forward(&self.conv2.forward(&x)?)?)?;
        Ok(self.conv3.forward(&x)?)
    }

    /// Prompt embedding on the image-embedding grid, `B×d_pr×H/16×W/16`.
    pub fn forward(&self, mask: &Tensor) -> Result<Tensor> {
        Ok(self.forward_quarter(mask)?.avg_pool2d(4)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn dims_of(t: &Tensor) -> Vec<usize> {
        t.dims().to_vec()
    }

    fn all_finite(t: &Tensor) -> bool {
        t.flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .all(|v| v.is_finite())
    }

    #[test]
    fn toy_pyramid_shapes_on_zero_image() {
        let cfg = ModelConfig::toy();
        let enc = ImageEncoder::new(&ParamBuilder::new(0, DType::F32, &Device::Cpu), &cfg).unwrap();
        let img = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let pyr = enc.forward(&img, &Ctx::eval()).unwrap();
        for s in &pyr.stages {
            assert_eq!(dims_of(s), [1, 32, 4, 4]);
            assert!(all_finite(s));
        }
        assert_eq!(dims_of(&pyr.f_im), [1, 16, 4, 4]);
        assert!(all_finite(&pyr.f_im));
    }

    #[test]
    fn full_width_stages() {
        let cfg = ModelConfig {
            d_im: 768,
            num_heads: 8,
            ..ModelConfig::toy()
        };
        let enc = ImageEncoder::new(&ParamBuilder::new(0, DType::F32, &Device::Cpu), &cfg).unwrap();
        let img = Tensor::ones((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let pyr = enc.forward(&img, &Ctx::eval()).unwrap();
        assert!(pyr.stages.iter().all(|s| s.dims() == [1, 768, 4, 4]));
    }

    #[test]
    fn prompt_embedding_shapes_and_sensitivity() {
        let cfg = ModelConfig::toy();
        let enc =
            PromptEncoder::new(&ParamBuilder::new(0, DType::F32, &Device::Cpu), &cfg).unwrap();
        let zeros = Tensor::zeros((3, 1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let ones = Tensor::ones((3, 1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let (a, b) = (enc.forward(&zeros).unwrap(), enc.forward(&ones).unwrap());
        assert_eq!(dims_of(&a), [3, 16, 4, 4]);
        assert_eq!(
            dims_of(&enc.forward_quarter(&ones).unwrap()),
            [3, 16, 16, 16]
        );
        let diff = (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 0.0);
        let wrong = Tensor::zeros((1, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(enc.forward(&wrong).is_err());
    }
}
