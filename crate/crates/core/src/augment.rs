//! Exact raster isometries (the dihedral group of the square).
//!
//! The augmentation pool uses six of the eight elements; the two diagonal
//! reflections exist so that composition and inversion stay closed.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{BinaryMask, EdgeMap, QualityMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Reflection about the main diagonal.
    Transpose,
    /// Reflection about the anti-diagonal.
    AntiTranspose,
}

impl Transform {
    pub const ALL: [Transform; 8] = [
        Transform::Identity,
        Transform::Rot90,
        Transform::Rot180,
        Transform::Rot270,
        Transform::FlipH,
        Transform::FlipV,
        Transform::Transpose,
        Transform::AntiTranspose,
    ];

    /// Default augmentation pool: identity, three rotations, two flips.
    pub const POOL: [Transform; 6] = [
        Transform::Identity,
        Transform::Rot90,
        Transform::Rot180,
        Transform::Rot270,
        Transform::FlipH,
        Transform::FlipV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Rot90 => "rot90",
            Transform::Rot180 => "rot180",
            Transform::Rot270 => "rot270",
            Transform::FlipH => "flip_h",
            Transform::FlipV => "flip_v",
            Transform::Transpose => "transpose",
            Transform::AntiTranspose => "anti_transpose",
        }
    }

    pub fn swaps_axes(self) -> bool {
        matches!(
            self,
            Transform::Rot90 | Transform::Rot270 | Transform::Transpose | Transform::AntiTranspose
        )
    }

    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Destination of source pixel `(y, x)` in an `h×w` raster.
    pub fn map_point(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Transform::Identity => (y, x),
            Transform::Rot90 => (x, h - 1 - y),
            Transform::Rot180 => (h - 1 - y, w - 1 - x),
            Transform::Rot270 => (w - 1 - x, y),
            Transform::FlipH => (y, w - 1 - x),
            Transform::FlipV => (h - 1 - y, x),
            Transform::Transpose => (x, y),
            Transform::AntiTranspose => (w - 1 - x, h - 1 - y),
        }
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(self, other: Transform) -> Transform {
        let probe: Vec<usize> = (0..6).collect();
        let (h1, w1, a) = apply_grid(self, 2, 3, &probe);
        let (_, _, b) = apply_grid(other, h1, w1, &a);
        Transform::ALL
            .into_iter()
            .find(|t| apply_grid(*t, 2, 3, &probe).2 == b)
            .expect("dihedral group is closed")
    }

    pub fn inverse(self) -> Transform {
        Transform::ALL
            .into_iter()
            .find(|t| self.then(*t) == Transform::Identity)
            .expect("every isometry is invertible")
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTransform(s.to_string()))
    }
}

/// Applies `t` to a row-major `h×w` grid; returns the new dims and data.
pub fn apply_grid<T: Copy>(t: Transform, h: usize, w: usize, data: &[T]) -> (usize, usize, Vec<T>) {
    assert_eq!(data.len(), h * w, "grid length does not match {h}x{w}");
    let (nh, nw) = t.output_dims(h, w);
    if data.is_empty() {
        return (nh, nw, Vec::new());
    }
    let mut out = vec![data[0]; nh * nw];
    for y in 0..h {
        for x in 0..w {
            let (ny, nx) = t.map_point(y, x, h, w);
            out[ny * nw + nx] = data[y * w + x];
        }
    }
    (nh, nw, out)
}

pub fn transform_mask(t: Transform, m: &BinaryMask) -> BinaryMask {
    let (h, w, data) = apply_grid(t, m.height(), m.width(), m.as_slice());
    BinaryMask::from_vec(h, w, data).expect("isometry preserves binary values")
}

pub fn transform_edges(t: Transform, e: &EdgeMap) -> EdgeMap {
    EdgeMap(transform_mask(t, e.mask()))
}

pub fn transform_quality(t: Transform, q: &QualityMap) -> QualityMap {
    let (h, w, data) = apply_grid(t, q.height(), q.width(), q.labels());
    QualityMap::from_vec(h, w, data).expect("isometry preserves length")
}

pub fn transform_image(t: Transform, img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let pixels: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    let (nh, nw, out) = apply_grid(t, h as usize, w as usize, &pixels);
    RgbImage::from_vec(nw as u32, nh as u32, out.into_iter().flatten().collect())
        .expect("buffer size matches")
}

/// Parses a comma- or whitespace-separated list of transform names.
pub fn parse_pool(names: &[String]) -> Result<Vec<Transform>> {
    let mut pool = Vec::new();
    for n in names {
        let t: Transform = n.trim().parse()?;
        if !pool.contains(&t) {
            pool.push(t);
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("augmentation pool is empty".into()));
    }
    Ok(pool)
}
