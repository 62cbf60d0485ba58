//! Augmented mixup sampling: each training sample fans out into `N` copies,
//! every copy under its own (isometry, mask source) pair.

use candle_core::{DType, Device};
use image::RgbImage;
use rand::seq::index;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::augment::{transform_image, transform_mask, Transform};
use crate::dataset::SampleTriplet;
use crate::edges::extract_edges;
use crate::error::{Error, Result};
use crate::losses::LossTargets;
use crate::quality::{derive_quality_map, BinaryMask, EdgeMap, QualityMap};
use crate::sources::{MaskSource, SourceInput};
use crate::tensors::{edges_to_tensor, images_to_tensor, masks_to_tensor, quality_to_tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedItem {
    pub sample_id: String,
    pub transform: Transform,
    pub source: String,
    pub image: RgbImage,
    pub unchecked: BinaryMask,
    pub gt_mask: BinaryMask,
    pub gt_quality: QualityMap,
    pub gt_edges: EdgeMap,
}

impl AugmentedItem {
    pub fn provenance(&self) -> String {
        format!("{}:{}:{}", self.sample_id, self.transform, self.source)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentedBatch {
    pub items: Vec<AugmentedItem>,
}

/// Model inputs and loss targets for one batch.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    pub images: candle_core::Tensor,
    pub unchecked: candle_core::Tensor,
    pub targets: LossTargets,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn extend(&mut self, items: Vec<AugmentedItem>) {
        self.items.extend(items);
    }

    pub fn provenance(&self) -> Vec<String> {
        self.items.iter().map(AugmentedItem::provenance).collect()
    }

    /// Recomputes the quality and edge targets and compares them with the stored ones.
    pub fn check_invariants(&self) -> Result<()> {
        for it in &self.items {
            let q = derive_quality_map(&it.gt_mask, &it.unchecked)?;
            if q != it.gt_quality || extract_edges(&it.gt_mask) != it.gt_edges {
                return Err(Error::InvalidArgument(format!(
                    "inconsistent targets for {}",
                    it.provenance()
                )));
            }
        }
        Ok(())
    }

    pub fn to_tensors(&self, dtype: DType, device: &Device) -> Result<BatchTensors> {
        let images: Vec<_> = self.items.iter().map(|i| &i.image).collect();
        let unchecked: Vec<_> = self.items.iter().map(|i| &i.unchecked).collect();
        let gt: Vec<_> = self.items.iter().map(|i| &i.gt_mask).collect();
        let quality: Vec<_> = self.items.iter().map(|i| &i.gt_quality).collect();
        let edges: Vec<_> = self.items.iter().map(|i| &i.gt_edges).collect();
        let unchecked = masks_to_tensor(&unchecked, dtype, device)?;
        Ok(BatchTensors {
            images: images_to_tensor(&images, dtype, device)?,
            targets: LossTargets {
                quality: quality_to_tensor(&quality, dtype, device)?,
                edges: edges_to_tensor(&edges, dtype, device)?,
                unchecked: unchecked.clone(),
                gt: masks_to_tensor(&gt, dtype, device)?,
            },
            unchecked,
        })
    }
}

/// Builds one augmented copy under a fixed transform and source.
pub fn augment_one(
    sample: &SampleTriplet,
    transform: Transform,
    source: &dyn MaskSource,
    seed: u64,
) -> Result<AugmentedItem> {
    let image = transform_image(transform, &sample.image);
    let gt_mask = transform_mask(transform, &sample.gt);
    let stored = sample
        .unchecked
        .as_ref()
        .map(|m| transform_mask(transform, m));
    let unchecked = source.generate(&SourceInput {
        image: &image,
        gt: &gt_mask,
        stored: stored.as_ref(),
        seed,
    })?;
    Ok(AugmentedItem {
        sample_id: sample.id.clone(),
        transform,
        source: source.name().to_string(),
        gt_quality: derive_quality_map(&gt_mask, &unchecked)?,
        gt_edges: extract_edges(&gt_mask),
        image,
        unchecked,
        gt_mask,
    })
}

/// `n_aug` copies of `sample`, each with a distinct (transform, source) pair
/// drawn uniformly without replacement from `pool × sources`.
pub fn build_augmented_batch(
    sample: &SampleTriplet,
    pool: &[Transform],
    sources: &[Box<dyn MaskSource>],
    n_aug: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedItem>> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no mask sources configured".into()));
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("augmentation pool is empty".into()));
    }
    let pairs = pool.len() * sources.len();
    if n_aug == 0 || n_aug > pairs {
        return Err(Error::InvalidArgument(format!(
            "n_aug must be in 1..={pairs} for {} transforms x {} sources, got {n_aug}",
            pool.len(),
            sources.len()
        )));
    }
    let picks = index::sample(rng, pairs, n_aug).into_vec();
    picks
        .into_iter()
        .map(|p| {
            let seed = rng.next_u64();
            augment_one(
                sample,
                pool[p / sources.len()],
                sources[p % sources.len()].as_ref(),
                seed,
            )
        })
        .collect()
}

/// Inference-style copy: identity transform, the sample's own unchecked mask.
pub fn plain_item(sample: &SampleTriplet) -> Result<AugmentedItem> {
    let unchecked = sample
        .unchecked
        .clone()
        .ok_or_else(|| Error::MissingUnchecked(vec![sample.id.clone()]))?;
    Ok(AugmentedItem {
        sample_id: sample.id.clone(),
        transform: Transform::Identity,
        source: "stored".into(),
        image: sample.image.clone(),
        gt_quality: derive_quality_map(&sample.gt, &unchecked)?,
        gt_edges: extract_edges(&sample.gt),
        unchecked,
        gt_mask: sample.gt.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::PqmClass;
    use crate::sources::{OracleSource, SyntheticSource};
    use crate::synth::{default_corruptions, synthetic_scene};
    use rand::SeedableRng;

    fn sources() -> Vec<Box<dyn MaskSource>> {
        default_corruptions(1)
            .into_iter()
            .map(|c| Box::new(SyntheticSource::new(c).unwrap()) as Box<dyn MaskSource>)
            .collect()
    }

    #[test]
    fn default_fan_out_has_distinct_pairs() {
        let s = synthetic_scene("s", 32, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let items = build_augmented_batch(&s, &Transform::POOL, &sources(), 4, &mut rng).unwrap();
        assert_eq!(items.len(), 4);
        let pairs: std::collections::HashSet<_> = items
            .iter()
            .map(|i| (i.transform, i.source.clone()))
            .collect();
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn oracle_identity_gives_only_tp_tn() {
        let s = synthetic_scene("s", 32, 1);
        let src: Vec<Box<dyn MaskSource>> = vec![Box::new(OracleSource)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let items = build_augmented_batch(&s, &[Transform::Identity], &src, 1, &mut rng).unwrap();
        let c = items[0].gt_quality.counts();
        assert_eq!(c[PqmClass::Fp.channel()] + c[PqmClass::Fn.channel()], 0);
        assert_eq!(items[0].gt_mask, s.gt);
    }

    #[test]
    fn invariants_hold_on_many_batches() {
        let srcs = sources();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100 {
            let s = synthetic_scene("s", 32, i);
            let batch = AugmentedBatch {
                items: build_augmented_batch(&s, &Transform::POOL, &srcs, 4, &mut rng).unwrap(),
            };
            batch.check_invariants().unwrap();
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let s = synthetic_scene("s", 32, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_augmented_batch(&s, &Transform::POOL, &[], 1, &mut rng).is_err());
        let one: Vec<Box<dyn MaskSource>> = vec![Box::new(OracleSource)];
        assert!(build_augmented_batch(&s, &[Transform::Identity], &one, 2, &mut rng).is_err());
        assert!(build_augmented_batch(&s, &[Transform::Identity], &one, 0, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let s = synthetic_scene("s", 32, 2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            build_augmented_batch(&s, &Transform::POOL, &sources(), 4, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn tensors_have_batch_layout() {
        let s = synthetic_scene("s", 32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = AugmentedBatch {
            items: build_augmented_batch(&s, &Transform::POOL, &sources(), 3, &mut rng).unwrap(),
        };
        let t = batch.to_tensors(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.images.dims(), &[3, 3, 32, 32]);
        assert_eq!(t.targets.quality.dims(), &[3, 4, 32, 32]);
        assert_eq!(t.targets.edges.dims(), &[3, 1, 32, 32]);
    }
}
