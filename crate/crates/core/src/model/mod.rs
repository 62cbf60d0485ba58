//! The assessment network: promptable encoder/decoder, edge branch and
//! edge-gated refinement.

pub mod asf;
pub mod attention;
pub mod config;
pub mod decoder;
pub mod egc;
pub mod encoder;
pub mod layers;
pub mod params;

use candle_core::{DType, Device, Tensor};

pub use config::ModelConfig;
pub use egc::EdgeLogits;
pub use encoder::FeaturePyramid;
pub use layers::{AttentionProbe, Ctx};
pub use params::{ParamBuilder, ParamStore};

use crate::error::Result;

/// Outputs of a full forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Final assessment logits `A`, `B×4×H×W` (channels TP, FP, TN, FN).
    pub a: Tensor,
    /// Coarse backbone logits `A₁`.
    pub a1: Tensor,
    pub edge: EdgeLogits,
}

#[derive(Clone, Debug)]
pub struct PqmModel {
    cfg: ModelConfig,
    pub encoder: encoder::ImageEncoder,
    pub prompt: encoder::PromptEncoder,
    pub decoder: decoder::MaskDecoder,
    pub edge_branch: egc::EdgeBranch,
    pub refiner: egc::Refiner,
    params: ParamStore,
}

impl PqmModel {
    pub fn new(cfg: &ModelConfig, device: &Device) -> Result<Self> {
        Self::with_dtype(cfg, DType::F32, device)
    }

    pub fn with_dtype(cfg: &ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let pb = ParamBuilder::new(cfg.init_seed, dtype, device);
        let encoder = encoder::ImageEncoder::new(&pb.pp("encoder"), cfg)?;
        let prompt = encoder::PromptEncoder::new(&pb.pp("prompt"), cfg)?;
        let decoder = decoder::MaskDecoder::new(&pb.pp("decoder"), cfg)?;
        let edge_branch = egc::EdgeBranch::new(&pb.pp("edge"), cfg)?;
        let refiner = egc::Refiner::new(&pb.pp("refine"), cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            prompt,
            decoder,
            edge_branch,
            refiner,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> Device {
        self.params
            .params()
            .values()
            .next()
            .map(|v| v.device().clone())
            .unwrap_or(Device::Cpu)
    }

    pub fn dtype(&self) -> DType {
        self.params
            .params()
            .values()
            .next()
            .map(|v| v.dtype())
            .unwrap_or(DType::F32)
    }

    pub fn encode_image(&self, image: &Tensor, ctx: &Ctx) -> Result<FeaturePyramid> {
        self.encoder.forward(image, ctx)
    }

    pub fn encode_prompt(&self, mask: &Tensor) -> Result<Tensor> {
        self.prompt.forward(mask)
    }

    /// `image`: `B×3×S×S` in 0..255; `mask`: `B×1×S×S` in {0,1}.
    pub fn forward(&self, image: &Tensor, mask: &Tensor, ctx: &Ctx) -> Result<ModelOutput> {
        let pyr = self.encode_image(image, ctx)?;
        let prompt = self.encode_prompt(mask)?;
        let a1 = self.decoder.forward(&pyr, &prompt, ctx)?;
        let edge = self.edge_branch.forward(&pyr, ctx)?;
        let a = self.refiner.forward(&a1, &edge.fused)?;
        Ok(ModelOutput { a, a1, edge })
    }
}
