//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion outside `KNOWN_UNATTAINABLE` fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pqm::ams::{build_augmented_batch, AugmentedBatch};
use pqm::augment::{transform_edges, transform_mask, transform_quality, Transform};
use pqm::edges::{eib_at_k, eib_from_quality_map, extract_edges, EdgeSource};
use pqm::io::{decode_rendered, read_rgb, render_quality_map, write_quality_map, write_rgb};
use pqm::losses::{
    class_probabilities, edge_loss, gamma_values, reconstruction_losses, weighted_ce, ClassWeights,
    LossConfig, SegTarget,
};
use pqm::metrics::{assessment_report, confusions, mean_of};
use pqm::model::{AttentionProbe, Ctx};
use pqm::sources::{MaskSource, SourceSpec, SyntheticSource};
use pqm::synth::{
    default_corruptions, synthetic_samples, synthetic_scene, with_corrupted_unchecked,
};
use pqm::tensors::{edges_to_tensor, masks_to_tensor, quality_to_tensor};
use pqm::train::{evaluate, LrSchedule, Trainer, TrainerConfig};
use pqm::{
    derive_quality_map, reconstruct_masks, BinaryMask, ModelConfig, PqmClass, PqmModel, QualityMap,
};

/// Criteria that cannot pass as stated; see the project notes.
const KNOWN_UNATTAINABLE: &[usize] = &[3];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type LossTerm<'a> = Box<dyn Fn(&Tensor) -> Tensor + 'a>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:.1?}, limit {limit:?}")
    })
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    let v = (0..h * w)
        .map(|_| u8::from(rng.random_bool(density)))
        .collect();
    BinaryMask::from_vec(h, w, v).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng, max: usize) -> (BinaryMask, BinaryMask) {
    let (h, w) = (rng.random_range(1..=max), rng.random_range(1..=max));
    let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    (random_mask(rng, h, w, a), random_mask(rng, h, w, b))
}

fn random_quality(rng: &mut ChaCha8Rng, h: usize, w: usize) -> QualityMap {
    let labels = (0..h * w)
        .map(|_| PqmClass::ALL[rng.random_range(0..4)])
        .collect();
    QualityMap::from_vec(h, w, labels).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn pqm_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let (gt, pred) = random_pair(&mut rng, 32);
        let q = derive_quality_map(&gt, &pred).map_err(|e| e.to_string())?;
        ensure(reconstruct_masks(&q) == (gt.clone(), pred), || {
            format!("pair {i} does not round-trip")
        })?;
        let mut cover = vec![0u8; q.len()];
        for c in PqmClass::ALL {
            for (k, &v) in q.indicator(c).as_slice().iter().enumerate() {
                cover[k] += v;
            }
        }
        ensure(cover.iter().all(|&c| c == 1), || {
            format!("pair {i} violates the partition")
        })?;
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 pairs in {:.2?}", start.elapsed()))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    };
    for i in 0..1000 {
        let (pred, gt) = (
            random_quality(&mut rng, 8, 8),
            random_quality(&mut rng, 8, 8),
        );
        let cms = confusions(&pred, &gt).map_err(|e| e.to_string())?;
        let report = assessment_report(&pred, &gt).map_err(|e| e.to_string())?;
        for c in PqmClass::ALL {
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            for (p, g) in pred.labels().iter().zip(gt.labels()) {
                match (*p == c, *g == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            let cm = cms[c.channel()];
            ensure((cm.tp, cm.fp, cm.fn_, cm.tn) == (tp, fp, fn_, tn), || {
                format!("pair {i} class {c}: counts differ")
            })?;
            let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
            let f1 = if 2.0 * tp + fp + fn_ > 0.0 {
                100.0 * 2.0 * tp / (2.0 * tp + fp + fn_)
            } else {
                0.0
            };
            let iou = if tp + fp + fn_ > 0.0 {
                100.0 * tp / (tp + fp + fn_)
            } else {
                0.0
            };
            ensure(
                rel(report.f1(c), f1) <= 1e-12 && rel(report.iou(c), iou) <= 1e-12,
                || {
                    format!(
                        "pair {i} class {c}: F1 {} vs {f1}, IoU {} vs {iou}",
                        report.f1(c),
                        report.iou(c)
                    )
                },
            )?;
        }
    }
    Ok("1000 pairs, counts exact, scores within 1e-12".into())
}

fn table_arithmetic() -> Outcome {
    let mf1 = mean_of([91.91, 42.92, 97.48, 38.36]);
    let miou = mean_of([85.08, 27.82, 95.10, 23.95]);
    let (d_f1, d_iou) = ((mf1 - 67.68).abs(), (miou - 57.99).abs());
    let detail =
        format!("mF1 {mf1:.4} vs 67.68 (|d| {d_f1:.4}), mIoU {miou:.4} vs 57.99 (|d| {d_iou:.4})");
    if d_f1 <= 0.01 + 1e-9 && d_iou <= 0.01 + 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn t4(v: Vec<f64>, dims: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_vec(v, dims, &Device::Cpu).unwrap()
}

fn gradient_error(
    x: &[f64],
    dims: (usize, usize, usize, usize),
    f: &dyn Fn(&Tensor) -> Tensor,
) -> f64 {
    let var = Var::from_tensor(&t4(x.to_vec(), dims)).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let auto: Vec<f64> = grads
        .get(var.as_tensor())
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let h = 1e-4;
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (mut up, mut down) = (x.to_vec(), x.to_vec());
        up[i] += h;
        down[i] -= h;
        let fd = (scalar(&f(&t4(up, dims))) - scalar(&f(&t4(down, dims)))) / (2.0 * h);
        diff += (auto[i] - fd).powi(2);
        na += auto[i].powi(2);
        nf += fd.powi(2);
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-300)
}

fn loss_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dev = Device::Cpu;
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let gt = random_mask(&mut rng, 6, 6, 0.5);
        let pred = random_mask(&mut rng, 6, 6, 0.5);
        let q = derive_quality_map(&gt, &pred).unwrap();
        let onehot = quality_to_tensor(&[&q], DType::F64, &dev).unwrap();
        let (gt_t, pred_t) = (
            masks_to_tensor(&[&gt], DType::F64, &dev).unwrap(),
            masks_to_tensor(&[&pred], DType::F64, &dev).unwrap(),
        );
        let edges = edges_to_tensor(&[&extract_edges(&gt)], DType::F64, &dev).unwrap();
        let logits: Vec<f64> = (0..4 * 36).map(|_| rng.random_range(-3.0..3.0)).collect();
        let edge_logits: Vec<f64> = (0..36).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = ClassWeights::default();
        let rec = |l: &Tensor, t| {
            reconstruction_losses(&class_probabilities(l).unwrap(), &pred_t, &gt_t, t).unwrap()
        };
        let terms: [(&str, LossTerm); 4] = [
            ("CE", Box::new(|l| weighted_ce(l, &onehot, &w).unwrap())),
            ("pos", Box::new(|l| rec(l, SegTarget::Unchecked).pos)),
            ("neg", Box::new(|l| rec(l, SegTarget::Unchecked).neg)),
            ("seg", Box::new(|l| rec(l, SegTarget::Predicted).seg)),
        ];
        for (name, f) in &terms {
            let err = gradient_error(&logits, (1, 4, 6, 6), f.as_ref());
            ensure(err < 1e-3, || {
                format!("trial {trial} {name}: relative error {err:e}")
            })?;
            worst = worst.max(err);
        }
        let edge = |e: &Tensor| edge_loss(e, &edges, 1.1, 1e-6).unwrap().total().unwrap();
        let err = gradient_error(&edge_logits, (1, 1, 6, 6), &edge);
        ensure(err < 1e-3, || {
            format!("trial {trial} edge: relative error {err:e}")
        })?;
        worst = worst.max(err);
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "worst relative error {worst:.2e} in {:.2?}",
        start.elapsed()
    ))
}

fn loss_fixed_points() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt = BinaryMask::from_fn(12, 12, |y, x| (3..9).contains(&y) && (2..8).contains(&x));
    let pred = BinaryMask::from_fn(12, 12, |y, x| (4..10).contains(&y) && (3..9).contains(&x));
    let q = derive_quality_map(&gt, &pred).unwrap();
    let onehot = quality_to_tensor(&[&q], DType::F64, &dev).unwrap();
    let logits = ((onehot.clone() * 2.0).unwrap() - 1.0)
        .unwrap()
        .affine(30.0, 0.0)
        .unwrap();
    let edges = edges_to_tensor(&[&extract_edges(&gt)], DType::F64, &dev).unwrap();
    let edge_logits = ((edges.clone() * 2.0).unwrap() - 1.0)
        .unwrap()
        .affine(40.0, 0.0)
        .unwrap();
    let (gt_t, pred_t) = (
        masks_to_tensor(&[&gt], DType::F64, &dev).unwrap(),
        masks_to_tensor(&[&pred], DType::F64, &dev).unwrap(),
    );
    let cfg = LossConfig::default();
    let rec = reconstruction_losses(
        &class_probabilities(&logits).unwrap(),
        &pred_t,
        &gt_t,
        cfg.seg_target,
    )
    .unwrap();
    let e = edge_loss(&edge_logits, &edges, cfg.lambda, cfg.dice_eps).unwrap();
    let terms = [
        (
            "CE",
            scalar(&weighted_ce(&logits, &onehot, &cfg.class_weights).unwrap()),
        ),
        ("BCE", scalar(&e.bce)),
        ("Dice", scalar(&e.dice)),
        ("pos", scalar(&rec.pos)),
        ("neg", scalar(&rec.neg)),
        ("seg", scalar(&rec.seg)),
    ];
    for (name, v) in terms {
        ensure(v.abs() < 1e-3, || {
            format!("{name} = {v:e} at the fixed point")
        })?;
    }
    let (edge_w, bg_w) = gamma_values(10, 90, 1.1);
    ensure(
        (edge_w - 0.9).abs() < 1e-15 && (bg_w - 0.11).abs() < 1e-15,
        || format!("gamma fixture gave ({edge_w}, {bg_w})"),
    )?;
    for _ in 0..100 {
        let l: Vec<f64> = (0..4 * 36).map(|_| rng.random_range(-4.0..4.0)).collect();
        let probs = class_probabilities(&t4(l, (1, 4, 6, 6))).unwrap();
        let gt = random_mask(&mut rng, 6, 6, 0.4);
        let g = masks_to_tensor(&[&gt], DType::F64, &dev).unwrap();
        let r = reconstruction_losses(&probs, &g, &g, SegTarget::Unchecked).unwrap();
        let (p, n) = (scalar(&r.pos), scalar(&r.neg));
        ensure((p - n).abs() < 1e-9, || format!("pos {p} != neg {n}"))?;
    }
    Ok(format!(
        "max term {:.1e}; gamma (0.9, 0.11); pos == neg on 100 draws",
        terms.iter().map(|t| t.1).fold(0.0, f64::max)
    ))
}

fn correction_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..1000 {
        let (gt, pred) = random_pair(&mut rng, 24);
        let q = derive_quality_map(&gt, &pred).unwrap();
        let (fn_, fp) = (q.indicator(PqmClass::Fn), q.indicator(PqmClass::Fp));
        for k in 0..gt.len() {
            let v = pred.as_slice()[k] as i32 + fn_.as_slice()[k] as i32 - fp.as_slice()[k] as i32;
            ensure(v == gt.as_slice()[k] as i32, || {
                format!("pair {i} pixel {k}: S + FN - FP = {v}")
            })?;
        }
    }
    Ok("1000 pairs".into())
}

fn toy_inputs(batch: usize) -> (Tensor, Tensor) {
    let samples = synthetic_samples(batch, 64, 7);
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().map(|s| &s.gt).collect();
    (
        pqm::tensors::images_to_tensor(&images, DType::F32, &Device::Cpu).unwrap(),
        masks_to_tensor(&masks, DType::F32, &Device::Cpu).unwrap(),
    )
}

fn shape_attention_contract() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::toy();
    let model = PqmModel::new(&cfg, &Device::Cpu).map_err(|e| e.to_string())?;
    let (img, mask) = toy_inputs(1);
    let probe = AttentionProbe::new();
    let out = model
        .forward(&img, &mask, &Ctx::eval().with_probe(&probe))
        .map_err(|e| e.to_string())?;
    ensure(out.a.dims() == [1, 4, 64, 64], || {
        format!("A is {:?}", out.a.dims())
    })?;
    ensure(out.edge.fused.dims() == [1, 1, 64, 64], || {
        format!("E is {:?}", out.edge.fused.dims())
    })?;
    let finite = |t: &Tensor| {
        t.flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .all(|v| v.is_finite())
    };
    ensure(finite(&out.a) && finite(&out.edge.fused), || {
        "non-finite output".into()
    })?;
    let dev = probe.max_deviation();
    ensure(!probe.records().is_empty() && dev <= 1e-6, || {
        format!("attention row deviation {dev:e}")
    })?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{} attention maps, max row deviation {dev:.1e}, {:.2?}",
        probe.records().len(),
        start.elapsed()
    ))
}

fn reachability() -> Outcome {
    let model = PqmModel::new(&ModelConfig::toy(), &Device::Cpu).map_err(|e| e.to_string())?;
    let (img, mask) = toy_inputs(2);
    let out = model
        .forward(&img, &mask, &Ctx::train())
        .map_err(|e| e.to_string())?;
    let grads = out
        .a
        .sum_all()
        .unwrap()
        .backward()
        .map_err(|e| e.to_string())?;
    let groups: Vec<String> = (0..4)
        .map(|s| format!("encoder.stages.{s}."))
        .chain((0..4).map(|i| format!("edge.sideouts.{i}.")))
        .chain(["refine.nonlocal.".to_string()])
        .collect();
    let mut checked = 0;
    for g in &groups {
        let params: Vec<_> = model
            .params()
            .params()
            .iter()
            .filter(|(k, _)| k.starts_with(g.as_str()))
            .collect();
        ensure(!params.is_empty(), || format!("no parameters under {g}"))?;
        for (name, v) in params {
            let live = grads.get(v.as_tensor()).is_some_and(|t| {
                t.abs()
                    .unwrap()
                    .max_all()
                    .unwrap()
                    .to_scalar::<f32>()
                    .unwrap()
                    > 0.0
            });
            ensure(live, || format!("no gradient reaches {name}"))?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} parameter tensors across {} groups",
        groups.len()
    ))
}

fn isometry_and_ams() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let (gt, pred) = random_pair(&mut rng, 20);
        let q = derive_quality_map(&gt, &pred).unwrap();
        let e = extract_edges(&gt);
        for t in Transform::POOL {
            let (tg, tp) = (transform_mask(t, &gt), transform_mask(t, &pred));
            ensure(
                derive_quality_map(&tg, &tp).unwrap() == transform_quality(t, &q),
                || format!("fixture {i}: {t} does not commute with the quality map"),
            )?;
            ensure(extract_edges(&tg) == transform_edges(t, &e), || {
                format!("fixture {i}: {t} does not commute with edges")
            })?;
        }
    }
    let sources: Vec<Box<dyn MaskSource>> = default_corruptions(3)
        .into_iter()
        .map(|c| Box::new(SyntheticSource::new(c).unwrap()) as Box<dyn MaskSource>)
        .collect();
    for i in 0..100 {
        let s = synthetic_scene(format!("s{i}"), 32, i);
        let batch = AugmentedBatch {
            items: build_augmented_batch(&s, &Transform::POOL, &sources, 4, &mut rng)
                .map_err(|e| e.to_string())?,
        };
        batch
            .check_invariants()
            .map_err(|e| format!("batch {i}: {e}"))?;
    }
    let run = || -> Vec<pqm::losses::LossBreakdown> {
        let cfg = TrainerConfig {
            n_aug: 2,
            learning_rate: 1e-3,
            max_steps: Some(3),
            seed: 17,
            ..TrainerConfig::default()
        };
        let mut tr = Trainer::new(cfg, &Device::Cpu).unwrap();
        tr.train_epoch(&synthetic_samples(3, 64, 5), &mut ())
            .unwrap()
    };
    let (a, b) = (run(), run());
    ensure(a.len() == 3 && a == b, || {
        "loss logs differ between seeded runs".into()
    })?;
    Ok("6 transforms x 100 fixtures, 100 AMS batches, identical 3-step loss logs".into())
}

fn overfit_smoke() -> Outcome {
    let start = Instant::now();
    let steps = 500;
    let cfg = TrainerConfig {
        learning_rate: 5e-3,
        lr_schedule: LrSchedule::Cosine { floor: 0.05 },
        max_steps: Some(steps),
        sources: vec![SourceSpec::Stored],
        loss: LossConfig {
            class_weights: ClassWeights::uniform(),
            ..LossConfig::default()
        },
        ..TrainerConfig::default()
    };
    let samples =
        with_corrupted_unchecked(synthetic_samples(8, 64, 42), &default_corruptions(0)).unwrap();
    let mut trainer = Trainer::new(cfg, &Device::Cpu).map_err(|e| e.to_string())?;
    let mut losses = Vec::new();
    while trainer.step() < steps {
        let epoch = trainer
            .train_epoch(&samples, &mut ())
            .map_err(|e| e.to_string())?;
        losses.extend(epoch.into_iter().map(|l| l.total));
    }
    let items = trainer.validation_items(&samples).unwrap();
    let report = evaluate(&trainer.model, &items).map_err(|e| e.to_string())?;
    let tail = &losses[losses.len() - 8..];
    let recent = tail.iter().sum::<f64>() / tail.len() as f64;
    let drop = losses[0] / recent;
    let detail = format!(
        "{} steps, training mIoU {:.2}, loss {:.3} -> {:.3} ({drop:.1}x), {:.0?}",
        trainer.step(),
        report.miou,
        losses[0],
        recent,
        start.elapsed()
    );
    ensure(trainer.step() <= steps, || {
        format!("ran {} steps", trainer.step())
    })?;
    ensure(report.miou >= 80.0, || detail.clone())?;
    ensure(drop >= 10.0, || detail.clone())?;
    within(start.elapsed(), Duration::from_secs(600)).map_err(|e| format!("{detail}; {e}"))?;
    Ok(detail)
}

fn square(n: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn(n, n, |y, x| {
        (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x)
    })
}

fn eib_fixtures() -> Outcome {
    let gt = square(12, 3, 3, 5);
    let shifted = derive_quality_map(&gt, &square(12, 4, 4, 5)).unwrap();
    let r = eib_at_k(&shifted, &extract_edges(&gt), 3).unwrap();
    ensure(r.percent == 100.0 && !r.undefined, || {
        format!("shifted square: {r:?}")
    })?;

    let gt = square(20, 1, 1, 4);
    let mut pred = gt.clone();
    for y in 14..17 {
        for x in 14..17 {
            pred.set(y, x, true);
        }
    }
    let far = eib_from_quality_map(
        &derive_quality_map(&gt, &pred).unwrap(),
        3,
        EdgeSource::GroundTruth,
    )
    .unwrap();
    ensure(far.percent == 0.0 && far.errors == 9, || {
        format!("far blob: {far:?}")
    })?;

    let clean = eib_from_quality_map(
        &derive_quality_map(&gt, &gt).unwrap(),
        3,
        EdgeSource::GroundTruth,
    )
    .unwrap();
    ensure(clean.percent == 0.0 && clean.undefined, || {
        format!("no errors: {clean:?}")
    })?;
    Ok(format!(
        "shifted {:.2}, far blob {:.2}, no-error {:.2} (undefined)",
        r.percent, far.percent, clean.percent
    ))
}

fn cli_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n);
    let gt = square(16, 3, 3, 8);
    let pred = square(16, 5, 4, 8);
    pqm::io::write_mask(&p("gt.png"), &gt).unwrap();
    pqm::io::write_mask(&p("pred.png"), &pred).unwrap();
    let bin = env!("CARGO_BIN_EXE_pqm");
    let out = Command::new(bin)
        .args(["pqm-gt", "--gt"])
        .arg(p("gt.png"))
        .arg("--pred")
        .arg(p("pred.png"))
        .arg("--out")
        .arg(p("q.png"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let out = Command::new(bin)
        .arg("eval")
        .arg("--pred")
        .arg(p("q.png"))
        .arg("--gt")
        .arg(p("q.png"))
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure(
        out.status.success() && stdout.contains("mF1=100.00"),
        || format!("eval printed: {stdout}"),
    )?;

    let q = derive_quality_map(&gt, &pred).unwrap();
    write_quality_map(&p("q2.png"), &q).unwrap();
    let rendered = render_quality_map(&q);
    write_rgb(&p("render.png"), &rendered).unwrap();
    let decoded =
        decode_rendered(&read_rgb(&p("render.png")).unwrap()).map_err(|e| e.to_string())?;
    ensure(decoded == q, || "decoded map differs".into())?;
    let again = render_quality_map(&decoded);
    write_rgb(&p("render2.png"), &again).unwrap();
    let (a, b) = (
        std::fs::read(p("render.png")).unwrap(),
        std::fs::read(p("render2.png")).unwrap(),
    );
    ensure(a == b && rendered.as_raw() == again.as_raw(), || {
        "render -> decode -> render is not byte-identical".into()
    })?;
    Ok(stdout.lines().last().unwrap_or_default().to_string())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("PQM round trip", pqm_round_trip),
        ("metrics oracle equivalence", metrics_oracle),
        ("report table arithmetic", table_arithmetic),
        ("loss gradient checks", loss_gradients),
        ("loss fixed points", loss_fixed_points),
        ("correction identity", correction_identity),
        ("shape/attention contract", shape_attention_contract),
        ("EGC/ASF reachability", reachability),
        ("isometry/AMS suite", isometry_and_ams),
        ("overfit smoke test", overfit_smoke),
        ("EIB@3 fixtures", eib_fixtures),
        ("CLI end-to-end", cli_end_to_end),
    ];
    let only: Option<usize> = std::env::var("PQM_ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut unexpected = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        match std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into())) {
            Ok(detail) => println!("PASS {n:2} {name}: {detail}"),
            Err(detail) => {
                let tag = if KNOWN_UNATTAINABLE.contains(&n) {
                    " [known]"
                } else {
                    ""
                };
                println!("FAIL {n:2} {name}{tag}: {detail}");
                if tag.is_empty() {
                    unexpected.push(n);
                }
            }
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
