//! Multi-source augmentation: each sample expands into distinct
//! (transform, mask source) pairs with targets derived after the transform.
//!
//! cargo run --example ams_batch -- [n_aug]

use pqm::ams::build_augmented_batch;
use pqm::augment::{transform_mask, Transform};
use pqm::sources::{build_sources, SourceSpec};
use pqm::synth::{default_corruptions, synthetic_scene};
use pqm::{derive_quality_map, mask_miou};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pqm::Result<()> {
    let n_aug: usize = std::env::args()
        .nth(1)
        .map_or(6, |s| s.parse().expect("n_aug"));
    let mut specs: Vec<SourceSpec> = default_corruptions(0)
        .into_iter()
        .map(SourceSpec::Synthetic)
        .collect();
    specs.push(SourceSpec::Oracle);
    let sources = build_sources(&specs)?;
    let sample = synthetic_scene("scene", 64, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let items = build_augmented_batch(&sample, &Transform::POOL, &sources, n_aug, &mut rng)?;

    println!(
        "{} of {} pairs drawn",
        items.len(),
        Transform::POOL.len() * sources.len()
    );
    for item in &items {
        let consistent = derive_quality_map(&item.gt_mask, &item.unchecked)? == item.gt_quality
            && transform_mask(item.transform, &sample.gt) == item.gt_mask;
        println!(
            "{:<28} mask mIoU {:6.2}  counts {:?}  consistent {consistent}",
            item.provenance(),
            mask_miou(&item.unchecked, &item.gt_mask)?,
            item.gt_quality.counts()
        );
    }
    let batch = pqm::ams::AugmentedBatch { items };
    batch.check_invariants()?;
    println!("batch invariants hold");
    Ok(())
}
