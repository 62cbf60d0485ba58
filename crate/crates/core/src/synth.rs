//! Procedural scenes: bright rectangular "buildings" on a noisy background.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SampleTriplet;
use crate::error::Result;
use crate::quality::BinaryMask;
use crate::sources::{CorruptionSpec, SyntheticSource};

/// A scene with 1–3 axis-aligned rectangles whose corners sit on a 4-pixel grid.
pub fn synthetic_scene(id: impl Into<String>, size: usize, seed: u64) -> SampleTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = size / 4;
    let mut gt = BinaryMask::zeros(size, size);
    for _ in 0..rng.random_range(1..=3) {
        let side_h = rng.random_range(3..=(cells / 2).max(3)).min(cells);
        let side_w = rng.random_range(3..=(cells / 2).max(3)).min(cells);
        let y0 = rng.random_range(0..=cells - side_h) * 4;
        let x0 = rng.random_range(0..=cells - side_w) * 4;
        for y in y0..y0 + side_h * 4 {
            for x in x0..x0 + side_w * 4 {
                gt.set(y, x, true);
            }
        }
    }
    let mut image = RgbImage::new(size as u32, size as u32);
    for (x, y, p) in image.enumerate_pixels_mut() {
        let n: i32 = rng.random_range(-20..=20);
        let base = if gt.get(y as usize, x as usize) {
            [200, 170, 150]
        } else {
            [60, 100, 50]
        };
        *p = Rgb(base.map(|b: i32| (b + n).clamp(0, 255) as u8));
    }
    SampleTriplet {
        id: id.into(),
        image,
        unchecked: None,
        gt,
    }
}

pub fn synthetic_samples(n: usize, size: usize, seed: u64) -> Vec<SampleTriplet> {
    (0..n)
        .map(|i| synthetic_scene(format!("scene{i:03}"), size, seed.wrapping_add(i as u64)))
        .collect()
}

/// Fills each sample's unchecked mask with a fixed corruption of its ground
/// truth, cycling through `specs`.
pub fn with_corrupted_unchecked(
    samples: Vec<SampleTriplet>,
    specs: &[CorruptionSpec],
) -> Result<Vec<SampleTriplet>> {
    let sources = specs
        .iter()
        .cloned()
        .map(SyntheticSource::new)
        .collect::<Result<Vec<_>>>()?;
    samples
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.unchecked = Some(sources[i % sources.len()].corrupt(&s.gt, i as u64));
            Ok(s)
        })
        .collect()
}

/// Four corruption profiles with coarse, spatially structured errors.
pub fn default_corruptions(seed: u64) -> Vec<CorruptionSpec> {
    vec![
        CorruptionSpec {
            name: "bloated".into(),
            dilate: 4,
            seed,
            ..Default::default()
        },
        CorruptionSpec {
            name: "thin".into(),
            erode: 4,
            seed: seed + 1,
            ..Default::default()
        },
        CorruptionSpec {
            name: "shifted".into(),
            jitter: 4,
            blob_rate: 1.0,
            blob_size: 8,
            seed: seed + 2,
            ..Default::default()
        },
        CorruptionSpec {
            name: "missing".into(),
            drop_prob: 0.5,
            blob_rate: 1.5,
            blob_size: 8,
            seed: seed + 3,
            ..Default::default()
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_nonempty() {
        let a = synthetic_scene("a", 64, 3);
        assert_eq!(a, synthetic_scene("a", 64, 3));
        assert!(a.gt.count_ones() > 0);
        assert!(a.gt.count_ones() < 64 * 64);
        assert_ne!(a.gt, synthetic_scene("a", 64, 4).gt);
    }

    #[test]
    fn stored_corruptions_are_fixed_and_wrong() {
        let a =
            with_corrupted_unchecked(synthetic_samples(4, 64, 0), &default_corruptions(0)).unwrap();
        let b =
            with_corrupted_unchecked(synthetic_samples(4, 64, 0), &default_corruptions(0)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.unchecked.as_ref() != Some(&s.gt)));
    }

    #[test]
    fn default_corruptions_validate() {
        for c in default_corruptions(0) {
            c.validate().unwrap();
            assert!(!c.is_identity());
        }
    }
}
