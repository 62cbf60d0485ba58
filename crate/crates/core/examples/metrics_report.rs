//! Scores noisy predicted quality maps against their references, pooled and
//! per image, and relates the per-image scores to the mask quality.
//!
//! cargo run --example metrics_report

use pqm::metrics::{format_report_table, Aggregation, ReportAccumulator};
use pqm::synth::{default_corruptions, synthetic_samples, with_corrupted_unchecked};
use pqm::{derive_quality_map, mask_miou, pearson_correlation, BinaryMask, QualityMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flip_pixels(m: &BinaryMask, rate: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    let data = m
        .as_slice()
        .iter()
        .map(|&v| u8::from((v != 0) ^ rng.random_bool(rate)))
        .collect();
    BinaryMask::from_vec(m.height(), m.width(), data).expect("same dims")
}

fn main() -> pqm::Result<()> {
    let samples = with_corrupted_unchecked(synthetic_samples(8, 64, 11), &default_corruptions(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut acc = ReportAccumulator::new();
    let (mut quality, mut score) = (Vec::new(), Vec::new());
    for s in &samples {
        let unchecked = s.unchecked.as_ref().expect("corrupted");
        let reference = derive_quality_map(&s.gt, unchecked)?;
        // A predictor that sees the mask exactly but guesses the ground truth with noise.
        let predicted: QualityMap =
            derive_quality_map(&flip_pixels(&s.gt, 0.05, &mut rng), unchecked)?;
        let r = acc.add(&predicted, &reference)?;
        quality.push(mask_miou(unchecked, &s.gt)?);
        score.push(r.miou);
    }
    let pooled = acc.finish(Aggregation::Pooled)?;
    let per_image = acc.finish(Aggregation::PerImage)?;
    print!(
        "{}",
        format_report_table([("pooled", &pooled), ("per-image", &per_image)])
    );
    match pearson_correlation(&quality, &score)? {
        Some(r) => println!("correlation of mask mIoU with assessment mIoU: {r:.3}"),
        None => println!("correlation undefined (constant series)"),
    }
    Ok(())
}
