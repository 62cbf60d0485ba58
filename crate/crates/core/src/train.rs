//! Optimizer, training step and loop, early stopping and inference.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ams::{augment_one, build_augmented_batch, plain_item, AugmentedBatch, AugmentedItem};
use crate::augment::{parse_pool, Transform};
use crate::dataset::SampleTriplet;
use crate::error::{Error, Result};
use crate::losses::{composite_loss, LossBreakdown, LossConfig};
use crate::metrics::{AssessmentReport, ReportAccumulator};
use crate::model::{Ctx, ModelConfig, ParamStore, PqmModel};
use crate::quality::{BinaryMask, EdgeMap, QualityMap};
use crate::sources::{build_sources, MaskSource, SourceSpec};
use crate::synth::default_corruptions;
use crate::tensors::{argmax_quality, images_to_tensor, masks_to_tensor, threshold_edges};

/// Adam with bias correction; moments are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in params.params() {
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else {
                continue;
            };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            if self.lr != 0.0 {
                let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
                let update = ((&m / bc1)? / denom)?;
                var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            }
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    /// `(t, first moments, second moments)`.
    pub fn state(&self) -> (u64, &BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (self.t, &self.m, &self.v)
    }

    pub fn set_state(&mut self, t: u64, m: BTreeMap<String, Tensor>, v: BTreeMap<String, Tensor>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

/// Validation quantity watched by early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    Mf1,
    #[default]
    Miou,
}

impl Monitor {
    pub fn read(self, r: &AssessmentReport) -> f64 {
        match self {
            Monitor::Mf1 => r.mf1,
            Monitor::Miou => r.miou,
        }
    }
}

/// Learning-rate schedule over `max_steps`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` down to `learning_rate * floor`.
    Cosine { floor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// Augmented copies per sample.
    pub n_aug: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Source samples per optimization step (each contributes `n_aug` items).
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on optimization steps across all epochs.
    pub max_steps: Option<usize>,
    pub patience: usize,
    pub monitor: Monitor,
    pub seed: u64,
    pub pool: Vec<String>,
    pub sources: Vec<SourceSpec>,
    /// Share of a single manifest held out for validation when no separate split is given.
    pub val_fraction: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            loss: LossConfig::default(),
            n_aug: 4,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            batch_size: 1,
            max_epochs: 200,
            max_steps: None,
            patience: 10,
            monitor: Monitor::Miou,
            seed: 0,
            pool: Transform::POOL
                .iter()
                .map(|t| t.name().to_string())
                .collect(),
            sources: default_corruptions(0)
                .into_iter()
                .map(SourceSpec::Synthetic)
                .collect(),
            val_fraction: 0.25,
        }
    }
}

impl TrainerConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Scheduled learning rate for the optimization step with 0-based index `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match (self.lr_schedule, self.max_steps) {
            (LrSchedule::Cosine { floor }, Some(total)) if total > 1 => {
                let p = (step.min(total - 1) as f64) / (total - 1) as f64;
                let min = self.learning_rate * floor;
                min + 0.5 * (self.learning_rate - min) * (1.0 + (std::f64::consts::PI * p).cos())
            }
            _ => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.class_weights.validate()?;
        let pool = parse_pool(&self.pool)?;
        if self.sources.is_empty() {
            return Err(Error::Config("at least one mask source is required".into()));
        }
        let pairs = pool.len() * self.sources.len();
        if self.n_aug == 0 || self.n_aug > pairs {
            return Err(Error::Config(format!(
                "n_aug must be in 1..={pairs}, got {}",
                self.n_aug
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if let LrSchedule::Cosine { floor } = self.lr_schedule {
            if self.max_steps.is_none() || !(0.0..=1.0).contains(&floor) {
                return Err(Error::Config(
                    "cosine schedule needs max_steps and a floor in [0, 1]".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        for s in &self.sources {
            s.build()?;
        }
        Ok(())
    }
}

/// Counter-based early stopping on a maximized metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    counter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            counter: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }

    /// Stops once the metric has failed to improve on more than `patience` consecutive epochs.
    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.counter = 0;
            return StopDecision::Improved;
        }
        self.counter += 1;
        if self.counter > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Hooks for streaming logs out of [`train_loop`].
pub trait TrainObserver {
    fn on_step(&mut self, _step: usize, _loss: &LossBreakdown) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Writes `step,ce,edge,pos,neg,seg,total` and `epoch,...` rows.
pub struct CsvLogger<A: Write, B: Write> {
    steps: A,
    epochs: B,
    headers_written: (bool, bool),
}

impl<A: Write, B: Write> CsvLogger<A, B> {
    pub fn new(steps: A, epochs: B) -> Self {
        Self {
            steps,
            epochs,
            headers_written: (false, false),
        }
    }
}

impl<A: Write, B: Write> TrainObserver for CsvLogger<A, B> {
    fn on_step(&mut self, step: usize, loss: &LossBreakdown) -> Result<()> {
        if !self.headers_written.0 {
            writeln!(self.steps, "{}", LossBreakdown::CSV_HEADER)?;
            self.headers_written.0 = true;
        }
        writeln!(self.steps, "{}", loss.csv_row(step))?;
        Ok(())
    }

    fn on_epoch(&mut self, r: &EpochRecord) -> Result<()> {
        if !self.headers_written.1 {
            writeln!(self.epochs, "{}", EpochRecord::CSV_HEADER)?;
            self.headers_written.1 = true;
        }
        writeln!(self.epochs, "{}", r.csv_row())?;
        self.epochs.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub val_mf1: f64,
    pub val_miou: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,steps,mean_loss,val_mF1,val_mIoU";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.2},{:.2}",
            self.epoch, self.steps, self.mean_loss, self.val_mf1, self.val_miou
        )
    }
}

/// Model, optimizer and sampling state of one training run.
pub struct Trainer {
    pub model: PqmModel,
    pub cfg: TrainerConfig,
    pub adam: Adam,
    pool: Vec<Transform>,
    sources: Vec<Box<dyn MaskSource>>,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("epoch", &self.epoch)
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let model = PqmModel::new(&cfg.model, device)?;
        Self::with_model(model, cfg)
    }

    pub fn with_model(model: PqmModel, cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        if model.config() != &cfg.model {
            return Err(Error::Config(
                "model does not match the trainer's model config".into(),
            ));
        }
        Ok(Self {
            pool: parse_pool(&cfg.pool)?,
            sources: build_sources(&cfg.sources)?,
            adam: Adam::new(cfg.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            step: 0,
            epoch: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub(crate) fn restore_progress(&mut self, step: usize, epoch: usize, rng: ChaCha8Rng) {
        self.step = step;
        self.epoch = epoch;
        self.rng = rng;
    }

    pub fn sources(&self) -> &[Box<dyn MaskSource>] {
        &self.sources
    }

    /// AMS fan-out of every sample in `samples`, kept together in one batch.
    pub fn sample_batch(&mut self, samples: &[&SampleTriplet]) -> Result<AugmentedBatch> {
        let mut batch = AugmentedBatch::default();
        for s in samples {
            let mut rng = ChaCha8Rng::seed_from_u64(self.rng.next_u64());
            batch.extend(build_augmented_batch(
                s,
                &self.pool,
                &self.sources,
                self.cfg.n_aug,
                &mut rng,
            )?);
        }
        Ok(batch)
    }

    /// One forward/backward pass and one Adam update.
    pub fn train_step(&mut self, batch: &AugmentedBatch) -> Result<LossBreakdown> {
        let t = batch.to_tensors(self.model.dtype(), &self.model.device())?;
        let out = self.model.forward(&t.images, &t.unchecked, &Ctx::train())?;
        let diverged = |msg: String| Error::Diverged {
            step: self.step + 1,
            msg: format!("{msg}; batch: {}", batch.provenance().join(", ")),
        };
        let (total, breakdown) =
            match composite_loss(&out.a, &out.edge.fused, &t.targets, &self.cfg.loss) {
                Ok(v) => v,
                Err(Error::NonFinite(m)) => return Err(diverged(m)),
                Err(e) => return Err(e),
            };
        let grads = total.backward()?;
        if self.cfg.lr_schedule != LrSchedule::Constant {
            self.adam.lr = self.cfg.lr_at(self.step);
        }
        self.adam.step(self.model.params(), &grads)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn steps_left(&self) -> usize {
        self.cfg
            .max_steps
            .map_or(usize::MAX, |m| m.saturating_sub(self.step))
    }

    /// One pass over `train` in a seeded random order; returns the per-step losses.
    pub fn train_epoch(
        &mut self,
        train: &[SampleTriplet],
        obs: &mut dyn TrainObserver,
    ) -> Result<Vec<LossBreakdown>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            if self.steps_left() == 0 {
                break;
            }
            let samples: Vec<&SampleTriplet> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = self.sample_batch(&samples)?;
            let loss = self.train_step(&batch)?;
            obs.on_step(self.step, &loss)?;
            losses.push(loss);
        }
        self.epoch += 1;
        Ok(losses)
    }

    /// Fixed validation items: the stored unchecked mask when present,
    /// otherwise a seeded draw from the configured sources without augmentation.
    pub fn validation_items(&self, val: &[SampleTriplet]) -> Result<Vec<AugmentedItem>> {
        val.iter()
            .enumerate()
            .map(|(i, s)| {
                if s.unchecked.is_some() {
                    plain_item(s)
                } else {
                    let src = self.sources[i % self.sources.len()].as_ref();
                    augment_one(
                        s,
                        Transform::Identity,
                        src,
                        self.cfg.seed ^ (i as u64).wrapping_mul(0x2545F4914F6CDD1D),
                    )
                }
            })
            .collect()
    }
}

/// Predicted quality maps for a set of items, evaluated `chunk` at a time.
pub fn predict_items(
    model: &PqmModel,
    items: &[AugmentedItem],
    chunk: usize,
) -> Result<Vec<(QualityMap, EdgeMap)>> {
    let mut out = Vec::with_capacity(items.len());
    for part in items.chunks(chunk.max(1)) {
        let batch = AugmentedBatch {
            items: part.to_vec(),
        };
        let t = batch.to_tensors(model.dtype(), &model.device())?;
        let o = model.forward(&t.images, &t.unchecked, &Ctx::eval())?;
        out.extend(
            argmax_quality(&o.a)?
                .into_iter()
                .zip(threshold_edges(&o.edge.fused)?),
        );
    }
    Ok(out)
}

/// Pooled-count report of predictions against the items' ground-truth quality maps.
pub fn evaluate(model: &PqmModel, items: &[AugmentedItem]) -> Result<AssessmentReport> {
    let mut acc = ReportAccumulator::new();
    for (item, (q, _)) in items.iter().zip(predict_items(model, items, 8)?) {
        acc.add(&q, &item.gt_quality)?;
    }
    acc.finish(crate::metrics::Aggregation::Pooled)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Parameter and buffer values at the best epoch, already restored into the model.
    pub best_state: BTreeMap<String, Tensor>,
}

/// Epoch loop with validation and early stopping; leaves the model at its best epoch.
pub fn train_loop(
    trainer: &mut Trainer,
    train: &[SampleTriplet],
    val: &[SampleTriplet],
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let val_items = trainer.validation_items(val)?;
    let mut stopper = EarlyStopping::new(trainer.cfg.patience);
    let mut history = Vec::new();
    let mut best_state = trainer.model.params().snapshot()?;
    let mut stopped_early = false;
    for _ in 0..trainer.cfg.max_epochs {
        if trainer.steps_left() == 0 {
            break;
        }
        let losses = trainer.train_epoch(train, obs)?;
        let report = evaluate(&trainer.model, &val_items)?;
        let record = EpochRecord {
            epoch: trainer.epoch(),
            steps: trainer.step(),
            mean_loss: losses.iter().map(|l| l.total).sum::<f64>() / losses.len().max(1) as f64,
            val_mf1: report.mf1,
            val_miou: report.miou,
        };
        obs.on_epoch(&record)?;
        history.push(record);
        match stopper.update(trainer.epoch(), trainer.cfg.monitor.read(&report)) {
            StopDecision::Improved => best_state = trainer.model.params().snapshot()?,
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    trainer.model.params().restore(&best_state)?;
    let (best_epoch, best_metric) = stopper.best().unwrap_or((0, 0.0));
    Ok(TrainOutcome {
        epochs_run: history.len(),
        history,
        best_epoch,
        best_metric,
        stopped_early,
        best_state,
    })
}

/// Splits off the last `fraction` of samples (at least one) for validation.
pub fn split_train_val(
    samples: Vec<SampleTriplet>,
    fraction: f64,
) -> Result<(Vec<SampleTriplet>, Vec<SampleTriplet>)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples to split".into(),
        ));
    }
    let n_val = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len() - 1);
    let mut train = samples;
    let val = train.split_off(train.len() - n_val);
    Ok((train, val))
}

/// Single forward pass: per-pixel argmax quality map and `sigmoid(E) > 0.5` edges.
pub fn assess(
    model: &PqmModel,
    image: &RgbImage,
    unchecked: &BinaryMask,
) -> Result<(QualityMap, EdgeMap)> {
    let s = model.config().image_size;
    let dims = (image.height() as usize, image.width() as usize);
    if dims != (s, s) {
        return Err(crate::error::shape_err((s, s), dims));
    }
    unchecked.ensure_same_dims(dims)?;
    let dev = model.device();
    let dtype: DType = model.dtype();
    let img = images_to_tensor(&[image], dtype, &dev)?;
    let mask = masks_to_tensor(&[unchecked], dtype, &dev)?;
    let out = model.forward(&img, &mask, &Ctx::eval())?;
    let q = argmax_quality(&out.a)?.remove(0);
    let e = threshold_edges(&out.edge.fused)?.remove(0);
    Ok((q, e))
}
