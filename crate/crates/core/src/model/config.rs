use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input side; must be a multiple of `patch_size`.
    pub image_size: usize,
    pub patch_size: usize,
    /// Image-encoder width.
    pub d_im: usize,
    /// Prompt / decoder width.
    pub d_pr: usize,
    /// Transformer layers per encoder stage.
    pub stage_depths: [usize; 4],
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Per-channel statistics applied to 0..255 RGB input.
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
    /// Spatial pooling of keys/values inside the non-local refinement.
    pub nonlocal_subsample: usize,
    /// Seed for parameter initialization and the positional-encoding table.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Small configuration that trains on a laptop CPU.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            d_im: 32,
            d_pr: 16,
            stage_depths: [1, 1, 1, 1],
            num_heads: 4,
            mlp_ratio: 4,
            pixel_mean: [123.675, 116.28, 103.53],
            pixel_std: [58.395, 57.12, 57.375],
            nonlocal_subsample: 4,
            init_seed: 0,
        }
    }

    /// Base-size widths at 1024² input. The stage depths may be block indices
    /// rather than counts; treat this preset as a template.
    pub fn base() -> Self {
        Self {
            image_size: 1024,
            d_im: 768,
            d_pr: 256,
            stage_depths: [2, 5, 8, 11],
            num_heads: 8,
            ..Self::toy()
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size != 16 {
            return bad(format!("patch_size must be 16, got {}", self.patch_size));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return bad(format!(
                "image_size {} is not a positive multiple of 16",
                self.image_size
            ));
        }
        if self.num_heads == 0
            || !self.d_pr.is_multiple_of(self.num_heads)
            || !self.d_im.is_multiple_of(self.num_heads)
        {
            return bad(format!(
                "d_pr ({}) and d_im ({}) must be divisible by num_heads ({})",
                self.d_pr, self.d_im, self.num_heads
            ));
        }
        if self.d_pr < 4 || !self.d_pr.is_multiple_of(2) {
            return bad(format!("d_pr must be even and >= 4, got {}", self.d_pr));
        }
        if self.stage_depths.contains(&0) {
            return bad("stage depths must be positive".into());
        }
        if self.nonlocal_subsample == 0 || !self.image_size.is_multiple_of(self.nonlocal_subsample)
        {
            return bad("nonlocal_subsample must divide image_size".into());
        }
        if self.pixel_std.iter().any(|&s| s <= 0.0) {
            return bad("pixel_std must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        let p = ModelConfig::base();
        p.validate().unwrap();
        assert_eq!((p.d_im, p.d_pr, p.stage_depths), (768, 256, [2, 5, 8, 11]));
    }

    #[test]
    fn size_not_multiple_of_16_is_rejected() {
        let cfg = ModelConfig {
            image_size: 60,
            ..ModelConfig::toy()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            num_heads: 3,
            ..ModelConfig::toy()
        };
        assert!(cfg.validate().is_err());
    }
}
