//! Providers of unchecked masks for training.
//!
//! A source sees the (already transformed) image and ground truth of one
//! augmented copy and returns the mask to be assessed. The synthetic source
//! corrupts the ground truth in reproducible ways; the stored source replays a
//! mask shipped with the dataset; the oracle returns the ground truth itself.

use std::collections::VecDeque;
use std::fmt;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edges::{dilate_square, erode_square};
use crate::error::{Error, Result};
use crate::quality::BinaryMask;

/// Everything a source may look at for one augmented copy.
#[derive(Clone, Copy, Debug)]
pub struct SourceInput<'a> {
    pub image: &'a RgbImage,
    pub gt: &'a BinaryMask,
    /// Dataset-provided unchecked mask, transformed like the image.
    pub stored: Option<&'a BinaryMask>,
    pub seed: u64,
}

pub trait MaskSource: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Must return a mask of the image's dimensions and be a pure function of `input`.
    fn generate(&self, input: &SourceInput<'_>) -> Result<BinaryMask>;
}

/// Corruption magnitudes of a [`SyntheticSource`]. Signed so that negative
/// values from a config file are rejected rather than wrapped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub name: String,
    /// Probability of removing each 8-connected foreground component.
    pub drop_prob: f64,
    pub dilate: i64,
    pub erode: i64,
    /// Maximum absolute translation in pixels along each axis.
    pub jitter: i64,
    /// Expected number of false-positive squares per image.
    pub blob_rate: f64,
    pub blob_size: i64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            drop_prob: 0.0,
            dilate: 0,
            erode: 0,
            jitter: 0,
            blob_rate: 0.0,
            blob_size: 4,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!(
                "drop_prob must lie in [0,1], got {}",
                self.drop_prob
            ));
        }
        for (k, v) in [
            ("dilate", self.dilate),
            ("erode", self.erode),
            ("jitter", self.jitter),
        ] {
            if v < 0 {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if !(self.blob_rate >= 0.0 && self.blob_rate.is_finite()) {
            return bad(format!(
                "blob_rate must be finite and non-negative, got {}",
                self.blob_rate
            ));
        }
        if self.blob_size < 1 {
            return bad(format!(
                "blob_size must be positive, got {}",
                self.blob_size
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.drop_prob == 0.0
            && self.dilate == 0
            && self.erode == 0
            && self.jitter == 0
            && self.blob_rate == 0.0
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSource {
    spec: CorruptionSpec,
}

impl SyntheticSource {
    pub fn new(spec: CorruptionSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &CorruptionSpec {
        &self.spec
    }

    /// Drop components, dilate, erode, translate, then paint blobs.
    pub fn corrupt(&self, gt: &BinaryMask, seed: u64) -> BinaryMask {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed);
        let mut m = gt.clone();
        if s.drop_prob > 0.0 {
            for comp in components(&m) {
                if rng.random_bool(s.drop_prob) {
                    for (y, x) in comp {
                        m.set(y, x, false);
                    }
                }
            }
        }
        if s.dilate > 0 {
            m = dilate_square(&m, s.dilate as usize);
        }
        if s.erode > 0 {
            m = erode_square(&m, s.erode as usize);
        }
        if s.jitter > 0 {
            let dy = rng.random_range(-s.jitter..=s.jitter);
            let dx = rng.random_range(-s.jitter..=s.jitter);
            m = translate(&m, dy, dx);
        }
        if s.blob_rate > 0.0 {
            let frac = s.blob_rate.fract();
            let count =
                s.blob_rate.floor() as usize + usize::from(frac > 0.0 && rng.random_bool(frac));
            let (h, w) = m.dims();
            let side = (s.blob_size as usize).min(h).min(w);
            for _ in 0..count {
                let y0 = rng.random_range(0..=h - side);
                let x0 = rng.random_range(0..=w - side);
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        m.set(y, x, true);
                    }
                }
            }
        }
        m
    }
}

impl MaskSource for SyntheticSource {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn generate(&self, input: &SourceInput<'_>) -> Result<BinaryMask> {
        check_dims(input, input.gt)?;
        Ok(self.corrupt(input.gt, input.seed))
    }
}

/// Replays the dataset's own unchecked mask.
#[derive(Clone, Debug, Default)]
pub struct StoredSource;

impl MaskSource for StoredSource {
    fn name(&self) -> &str {
        "stored"
    }

    fn generate(&self, input: &SourceInput<'_>) -> Result<BinaryMask> {
        let m = input.stored.ok_or_else(|| {
            Error::InvalidArgument("stored source needs an unchecked mask in the sample".into())
        })?;
        check_dims(input, m)?;
        Ok(m.clone())
    }
}

/// Returns the ground truth: a perfect segmenter.
#[derive(Clone, Debug, Default)]
pub struct OracleSource;

impl MaskSource for OracleSource {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, input: &SourceInput<'_>) -> Result<BinaryMask> {
        check_dims(input, input.gt)?;
        Ok(input.gt.clone())
    }
}

fn check_dims(input: &SourceInput<'_>, m: &BinaryMask) -> Result<()> {
    let img = (input.image.height() as usize, input.image.width() as usize);
    m.ensure_same_dims(img)
}

/// Declarative source description used in training configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Synthetic(CorruptionSpec),
    Stored,
    Oracle,
}

impl SourceSpec {
    pub fn build(&self) -> Result<Box<dyn MaskSource>> {
        Ok(match self {
            SourceSpec::Synthetic(spec) => Box::new(SyntheticSource::new(spec.clone())?),
            SourceSpec::Stored => Box::new(StoredSource),
            SourceSpec::Oracle => Box::new(OracleSource),
        })
    }
}

pub fn build_sources(specs: &[SourceSpec]) -> Result<Vec<Box<dyn MaskSource>>> {
    specs.iter().map(SourceSpec::build).collect()
}

/// Shift by `(dy, dx)` with zero fill.
pub fn translate(m: &BinaryMask, dy: i64, dx: i64) -> BinaryMask {
    let (h, w) = m.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        let sy = y as i64 - dy;
        let sx = x as i64 - dx;
        (0..h as i64).contains(&sy)
            && (0..w as i64).contains(&sx)
            && m.get(sy as usize, sx as usize)
    })
}

/// 8-connected foreground components in raster order of their first pixel.
pub fn components(m: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = m.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !m.get(y0, x0) || seen[y0 * w + x0] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(y0, x0)]);
            seen[y0 * w + x0] = true;
            while let Some((y, x)) = queue.pop_front() {
                comp.push((y, x));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if m.get(ny, nx) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}
