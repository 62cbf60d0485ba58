//! Safetensors checkpoints holding weights, buffers, optimizer moments and
//! enough sampling state to resume a run exactly.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::model::PqmModel;
use crate::train::{Trainer, TrainerConfig};

const MODEL: &str = "model.";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainerConfig,
    pub step: usize,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    /// Parameters and buffers by name.
    pub weights: BTreeMap<String, Tensor>,
    pub adam_t: u64,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

fn cerr(msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn to_bytes(t: &Tensor) -> Result<(Vec<usize>, Vec<u8>)> {
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok((
        t.dims().to_vec(),
        v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    ))
}

fn from_view(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    if view.dtype() != Dtype::F32 {
        return Err(cerr(format!(
            "expected F32 tensors, found {:?}",
            view.dtype()
        )));
    }
    let data: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::from_vec(data, view.shape(), device)?)
}

impl Checkpoint {
    pub fn from_trainer(tr: &Trainer) -> Result<Self> {
        let (t, m, v) = tr.adam.state();
        Ok(Self {
            config: tr.cfg.clone(),
            step: tr.step(),
            epoch: tr.epoch(),
            rng: tr.rng().clone(),
            weights: tr.model.params().snapshot()?,
            adam_t: t,
            adam_m: m.clone(),
            adam_v: v.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut owned = Vec::new();
        for (prefix, map) in [
            (MODEL, &self.weights),
            (ADAM_M, &self.adam_m),
            (ADAM_V, &self.adam_v),
        ] {
            for (k, t) in map {
                let (shape, bytes) = to_bytes(t)?;
                owned.push((format!("{prefix}{k}"), shape, bytes));
            }
        }
        let views = owned
            .iter()
            .map(|(k, shape, bytes)| {
                Ok((
                    k.as_str(),
                    TensorView::new(Dtype::F32, shape.clone(), bytes).map_err(cerr)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert(
            "config".to_string(),
            serde_json::to_string(&self.config).map_err(cerr)?,
        );
        meta.insert("step".to_string(), self.step.to_string());
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("adam_t".to_string(), self.adam_t.to_string());
        meta.insert(
            "rng".to_string(),
            serde_json::to_string(&self.rng).map_err(cerr)?,
        );
        safetensors::serialize_to_file(views, Some(meta), path).map_err(cerr)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let buf = std::fs::read(path)?;
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(cerr)?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| cerr(format!("missing metadata `{k}`")))
        };
        let number = |k: &str| -> Result<u64> { field(k)?.parse().map_err(cerr) };
        let config: TrainerConfig = serde_json::from_str(field("config")?).map_err(cerr)?;
        let rng: ChaCha8Rng = serde_json::from_str(field("rng")?).map_err(cerr)?;
        let st = SafeTensors::deserialize(&buf).map_err(cerr)?;
        let (mut weights, mut adam_m, mut adam_v) =
            (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        for (name, view) in st.tensors() {
            let t = from_view(&view, device)?;
            if let Some(k) = name.strip_prefix(MODEL) {
                weights.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(ADAM_M) {
                adam_m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(ADAM_V) {
                adam_v.insert(k.to_string(), t);
            } else {
                return Err(cerr(format!("unexpected tensor `{name}`")));
            }
        }
        Ok(Self {
            config,
            step: number("step")? as usize,
            epoch: number("epoch")? as usize,
            adam_t: number("adam_t")?,
            rng,
            weights,
            adam_m,
            adam_v,
        })
    }

    /// Rebuilds the model with the stored weights.
    pub fn model(&self, device: &Device) -> Result<PqmModel> {
        let model = PqmModel::new(&self.config.model, device)?;
        model.params().restore(&self.weights)?;
        Ok(model)
    }

    /// Rebuilds a trainer that continues exactly where this checkpoint was taken.
    pub fn trainer(&self, device: &Device) -> Result<Trainer> {
        let mut tr = Trainer::with_model(self.model(device)?, self.config.clone())?;
        let dt = tr.model.dtype();
        let cast = |m: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Tensor>> {
            m.iter()
                .map(|(k, t)| Ok((k.clone(), t.to_dtype(dt)?)))
                .collect()
        };
        tr.adam
            .set_state(self.adam_t, cast(&self.adam_m)?, cast(&self.adam_v)?);
        tr.restore_progress(self.step, self.epoch, self.rng.clone());
        Ok(tr)
    }
}

pub fn load_model(path: &Path, device: &Device) -> Result<PqmModel> {
    Checkpoint::load(path, device)?.model(device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_samples;
    use crate::train::TrainerConfig;

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = TrainerConfig {
            n_aug: 2,
            learning_rate: 1e-3,
            ..TrainerConfig::default()
        };
        let samples = synthetic_samples(2, 64, 11);
        let dev = Device::Cpu;
        let mut a = Trainer::new(cfg, &dev).unwrap();
        a.train_epoch(&samples, &mut ()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.safetensors");
        Checkpoint::from_trainer(&a).unwrap().save(&p).unwrap();
        let mut b = Checkpoint::load(&p, &dev).unwrap().trainer(&dev).unwrap();
        assert_eq!((b.step(), b.epoch()), (a.step(), a.epoch()));

        let la = a.train_epoch(&samples, &mut ()).unwrap();
        let lb = b.train_epoch(&samples, &mut ()).unwrap();
        assert_eq!(la, lb);
        let (sa, sb) = (
            a.model.params().snapshot().unwrap(),
            b.model.params().snapshot().unwrap(),
        );
        for (k, t) in &sa {
            assert_eq!(flat(t), flat(&sb[k]), "{k}");
        }
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.safetensors");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&p, &Device::Cpu).is_err());
    }
}
