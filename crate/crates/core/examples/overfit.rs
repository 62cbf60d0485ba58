//! Overfits the toy model on eight synthetic scenes, then saves a checkpoint
//! and assesses one training scene with the restored model.
//!
//! cargo run --example overfit -- [steps] [learning_rate]

use std::time::Instant;

use candle_core::Device;
use pqm::checkpoint::{load_model, Checkpoint};
use pqm::losses::{ClassWeights, LossConfig};
use pqm::sources::SourceSpec;
use pqm::synth::{default_corruptions, synthetic_samples, with_corrupted_unchecked};
use pqm::train::{assess, evaluate, LrSchedule, Trainer, TrainerConfig};
use pqm::{mask_miou, reconstruct_masks, PqmClass};

fn main() -> pqm::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let lr: f64 = args
        .next()
        .map_or(5e-3, |s| s.parse().expect("learning rate"));
    let cfg = TrainerConfig {
        learning_rate: lr,
        lr_schedule: LrSchedule::Cosine { floor: 0.05 },
        max_steps: Some(steps),
        sources: vec![SourceSpec::Stored],
        loss: LossConfig {
            class_weights: ClassWeights::uniform(),
            ..LossConfig::default()
        },
        ..TrainerConfig::default()
    };
    let samples = with_corrupted_unchecked(synthetic_samples(8, 64, 42), &default_corruptions(0))?;
    let mut trainer = Trainer::new(cfg, &Device::Cpu)?;
    let eval_items = trainer.validation_items(&samples)?;

    let start = Instant::now();
    let mut losses = Vec::new();
    while trainer.step() < steps {
        losses.extend(
            trainer
                .train_epoch(&samples, &mut ())?
                .into_iter()
                .map(|l| l.total),
        );
        let r = evaluate(&trainer.model, &eval_items)?;
        println!(
            "epoch {:3} step {:4} loss {:.4} mIoU {:6.2} mF1 {:6.2} IoU tp/fp/tn/fn {:.1}/{:.1}/{:.1}/{:.1} ({:.0?})",
            trainer.epoch(),
            trainer.step(),
            losses.last().copied().unwrap_or(f64::NAN),
            r.miou,
            r.mf1,
            r.iou(PqmClass::Tp),
            r.iou(PqmClass::Fp),
            r.iou(PqmClass::Tn),
            r.iou(PqmClass::Fn),
            start.elapsed()
        );
    }
    let tail = &losses[losses.len().saturating_sub(8)..];
    let recent = tail.iter().sum::<f64>() / tail.len() as f64;
    println!(
        "loss at step 1: {:.4}, mean of last {}: {recent:.4}",
        losses[0],
        tail.len()
    );

    let dir = std::env::temp_dir().join("pqm-overfit");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("overfit.safetensors");
    Checkpoint::from_trainer(&trainer)?.save(&path)?;
    let model = load_model(&path, &Device::Cpu)?;
    let s = &samples[0];
    let unchecked = s.unchecked.as_ref().expect("stored mask");
    let (q, e) = assess(&model, &s.image, unchecked)?;
    let (_, pred) = reconstruct_masks(&q);
    println!(
        "{}: {} edge pixels; reconstructed mask vs input mIoU {:.2}; checkpoint {}",
        s.id,
        e.count(),
        mask_miou(&pred, unchecked)?,
        path.display()
    );
    Ok(())
}
