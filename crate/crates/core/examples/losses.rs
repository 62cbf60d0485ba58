//! The composite training loss on one augmented batch, for the untrained
//! network and for logits that already encode the answer.
//!
//! cargo run --example losses

use candle_core::Device;
use pqm::ams::AugmentedBatch;
use pqm::losses::{composite_loss, gamma_values, LossBreakdown, LossConfig};
use pqm::model::{Ctx, ModelConfig, PqmModel};
use pqm::synth::synthetic_samples;
use pqm::train::{Trainer, TrainerConfig};

fn show(label: &str, b: &LossBreakdown) {
    println!(
        "{label:>10}: ce {:.4} edge {:.4} pos {:.4} neg {:.4} seg {:.4} total {:.4}",
        b.ce, b.edge, b.pos, b.neg, b.seg, b.total
    );
}

fn main() -> pqm::Result<()> {
    let dev = Device::Cpu;
    let cfg = LossConfig::default();
    let mut trainer = Trainer::new(TrainerConfig::default(), &dev)?;
    let samples = synthetic_samples(2, 64, 9);
    let batch: AugmentedBatch = trainer.sample_batch(&samples.iter().collect::<Vec<_>>())?;
    println!("batch of {}: {:?}", batch.len(), batch.provenance());
    let t = batch.to_tensors(candle_core::DType::F32, &dev)?;

    let model = PqmModel::new(&ModelConfig::toy(), &dev)?;
    let out = model.forward(&t.images, &t.unchecked, &Ctx::eval())?;
    let (_, untrained) = composite_loss(&out.a, &out.edge.fused, &t.targets, &cfg)?;
    show("untrained", &untrained);

    let sharp = t.targets.quality.affine(20.0, -10.0)?;
    let edges = t.targets.edges.affine(20.0, -10.0)?;
    let (_, oracle) = composite_loss(&sharp, &edges, &t.targets, &cfg)?;
    show("oracle", &oracle);

    let first = &batch.items[0].gt_edges;
    let (n_pos, n_neg) = (first.count(), first.mask().len() - first.count());
    let (g_pos, g_neg) = gamma_values(n_pos, n_neg, cfg.lambda);
    println!(
        "edge balance for {}: {n_pos} edge / {n_neg} other pixels, weights {g_pos:.4} / {g_neg:.4}",
        batch.items[0].provenance()
    );
    Ok(())
}
