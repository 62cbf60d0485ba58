//! Boundary extraction and edge-buffer error statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{reconstruct_masks, BinaryMask, EdgeMap, QualityMap};

/// Erosion by the 3×3 cross. Pixels outside the raster count as background.
pub fn erode_cross(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && y > 0
            && mask.get(y - 1, x)
            && y + 1 < h
            && mask.get(y + 1, x)
            && x > 0
            && mask.get(y, x - 1)
            && x + 1 < w
            && mask.get(y, x + 1)
    })
}

/// Dilation by a `(2r+1)×(2r+1)` square, clipped at the raster border.
///
/// Separable: a running row maximum followed by a column maximum.
pub fn dilate_square(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let mut rows = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows.set(y, x, (lo..=hi).any(|xx| mask.get(y, xx)));
        }
    }
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out.set(y, x, (lo..=hi).any(|yy| rows.get(yy, x)));
        }
    }
    out
}

/// Erosion by a `(2r+1)×(2r+1)` square; outside the raster is background.
pub fn erode_square(mask: &BinaryMask, r: usize) -> BinaryMask {
    // Erosion of A with zero padding is the complement of the dilation of the
    // complement, with the padding ring treated as foreground of the complement.
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let inv = dilate_square(&mask.complement(), r);
    BinaryMask::from_fn(h, w, |y, x| {
        !inv.get(y, x) && y >= r && x >= r && y + r < h && x + r < w
    })
}

/// Inner boundary: foreground pixels with at least one background 4-neighbour.
pub fn extract_edges(mask: &BinaryMask) -> EdgeMap {
    let eroded = erode_cross(mask);
    let (h, w) = mask.dims();
    EdgeMap(BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x) && !eroded.get(y, x)
    }))
}

/// Pixels within Chebyshev distance `k` of an edge pixel.
pub fn edge_buffer(edges: &EdgeMap, k: i64) -> Result<BinaryMask> {
    if k < 0 {
        return Err(Error::InvalidArgument(format!(
            "buffer radius must be >= 0, got {k}"
        )));
    }
    Ok(dilate_square(edges.mask(), k as usize))
}

/// Percentage of error pixels inside an edge buffer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EibResult {
    pub percent: f64,
    pub errors_in_buffer: usize,
    pub errors: usize,
    /// Set when there are no error pixels; `percent` is then 0.
    pub undefined: bool,
}

/// Which mask's boundaries define the buffer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    #[default]
    GroundTruth,
    Unchecked,
    Union,
}

/// EIB@k against a precomputed edge map.
pub fn eib_at_k(q: &QualityMap, edges: &EdgeMap, k: i64) -> Result<EibResult> {
    if q.dims() != edges.dims() {
        return Err(crate::error::shape_err(q.dims(), edges.dims()));
    }
    let buffer = edge_buffer(edges, k)?;
    let mut errors = 0;
    let mut inside = 0;
    for (i, c) in q.labels().iter().enumerate() {
        if c.is_error() {
            errors += 1;
            if buffer.as_slice()[i] != 0 {
                inside += 1;
            }
        }
    }
    Ok(if errors == 0 {
        EibResult {
            percent: 0.0,
            errors_in_buffer: 0,
            errors: 0,
            undefined: true,
        }
    } else {
        EibResult {
            percent: 100.0 * inside as f64 / errors as f64,
            errors_in_buffer: inside,
            errors,
            undefined: false,
        }
    })
}

/// EIB@k with the buffer built from the masks implied by `q`.
pub fn eib_from_quality_map(q: &QualityMap, k: i64, source: EdgeSource) -> Result<EibResult> {
    let (gt, pred) = reconstruct_masks(q);
    let edges = match source {
        EdgeSource::GroundTruth => extract_edges(&gt),
        EdgeSource::Unchecked => extract_edges(&pred),
        EdgeSource::Union => {
            let a = extract_edges(&gt);
            let b = extract_edges(&pred);
            let (h, w) = gt.dims();
            EdgeMap(BinaryMask::from_fn(h, w, |y, x| {
                a.0.get(y, x) || b.0.get(y, x)
            }))
        }
    };
    eib_at_k(q, &edges, k)
}
