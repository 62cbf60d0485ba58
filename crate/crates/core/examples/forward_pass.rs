//! One forward pass of the untrained toy network on a synthetic scene:
//! feature pyramid, logits and edge maps, with an attention probe attached.
//!
//! cargo run --example forward_pass

use candle_core::Device;
use pqm::model::{AttentionProbe, Ctx, ModelConfig, PqmModel};
use pqm::synth::{default_corruptions, synthetic_samples, with_corrupted_unchecked};
use pqm::train::assess;

fn main() -> pqm::Result<()> {
    let dev = Device::Cpu;
    let cfg = ModelConfig::toy();
    let model = PqmModel::new(&cfg, &dev)?;
    println!(
        "toy model: {} parameter tensors, {} scalars, token grid {}x{}",
        model.params().params().len(),
        model.params().num_scalars(),
        cfg.grid(),
        cfg.grid()
    );

    let s = with_corrupted_unchecked(
        synthetic_samples(1, cfg.image_size, 3),
        &default_corruptions(0),
    )?
    .remove(0);
    let unchecked = s.unchecked.clone().expect("corrupted");
    let item = pqm::ams::plain_item(&s)?;
    let batch = pqm::ams::AugmentedBatch { items: vec![item] };
    let t = batch.to_tensors(model.dtype(), &dev)?;

    let probe = AttentionProbe::new();
    let ctx = Ctx::eval().with_probe(&probe);
    let pyramid = model.encode_image(&t.images, &ctx)?;
    for (i, stage) in pyramid.stages.iter().enumerate() {
        println!("stage {}: {:?}", i + 1, stage.dims());
    }
    let out = model.forward(&t.images, &t.unchecked, &ctx)?;
    println!("A: {:?}  A1: {:?}", out.a.dims(), out.a1.dims());
    println!(
        "edge fused: {:?}  sideouts: {:?}",
        out.edge.fused.dims(),
        out.edge.sideouts.dims()
    );
    println!(
        "{} attention layers probed, worst row-sum deviation {:.2e}",
        probe.records().len(),
        probe.max_deviation()
    );

    let (q, e) = assess(&model, &s.image, &unchecked)?;
    println!(
        "assessed {}: class counts {:?}, {} edge pixels",
        s.id,
        q.counts(),
        e.count()
    );
    Ok(())
}
