//! Seeded parameter registry with hierarchical names.
//!
//! Every trainable tensor is a [`Var`] registered under a dotted path such as
//! `decoder.blocks.0.self_attn.q_proj.weight`. Names are the checkpoint keys,
//! so they must stay stable.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Normal(0, std) resampled outside ±2·std.
    TruncNormal {
        std: f64,
    },
    /// Truncated normal with std = sqrt(2 / fan_in).
    Kaiming {
        fan_in: usize,
    },
}

#[derive(Debug)]
struct Registry {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

/// Builder handle scoped to a name prefix. Cheap to clone.
#[derive(Clone, Debug)]
pub struct ParamBuilder {
    registry: Rc<RefCell<Registry>>,
    prefix: String,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            registry: Rc::new(RefCell::new(Registry {
                params: BTreeMap::new(),
                buffers: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                device: device.clone(),
                dtype,
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            registry: self.registry.clone(),
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn device(&self) -> Device {
        self.registry.borrow().device.clone()
    }

    pub fn dtype(&self) -> DType {
        self.registry.borrow().dtype
    }

    fn make(&self, shape: &Shape, init: Init) -> Result<Tensor> {
        let mut reg = self.registry.borrow_mut();
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::TruncNormal { std } => (0..n).map(|_| trunc_normal(&mut reg.rng, std)).collect(),
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| trunc_normal(&mut reg.rng, std)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape.clone(), &reg.device)?.to_dtype(reg.dtype)?;
        Ok(t)
    }

    /// Registers a trainable parameter and returns its tensor view.
    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        let shape = shape.into();
        let path = self.path(name);
        if self.registry.borrow().params.contains_key(&path) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{path}`"
            )));
        }
        let t = self.make(&shape, init)?;
        let var = Var::from_tensor(&t)?;
        let view = var.as_tensor().clone();
        self.registry.borrow_mut().params.insert(path, var);
        Ok(view)
    }

    /// Registers a non-trainable state tensor (running statistics, fixed tables).
    pub fn buffer(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Var> {
        let shape = shape.into();
        let path = self.path(name);
        let t = self.make(&shape, init)?;
        let var = Var::from_tensor(&t)?;
        self.registry.borrow_mut().buffers.insert(path, var.clone());
        Ok(var)
    }

    /// Draws a standard-normal table from the builder's generator.
    pub fn normal_values(&self, n: usize, std: f64) -> Vec<f64> {
        let mut reg = self.registry.borrow_mut();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut reg.rng);
                z * std
            })
            .collect()
    }

    pub fn finish(self) -> ParamStore {
        let reg = self.registry.borrow();
        ParamStore {
            params: reg.params.clone(),
            buffers: reg.buffers.clone(),
        }
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Named trainable parameters and state buffers of a built model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Copies current values of parameters and buffers.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            out.insert(k.clone(), v.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Overwrites values from a snapshot; every name must be present with a matching shape.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            let t = values
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")))?;
            if t.dims() != v.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{k}`: {:?} vs {:?}",
                    t.dims(),
                    v.dims()
                )));
            }
            v.set(&t.to_dtype(v.dtype())?)?;
        }
        Ok(())
    }

    /// Block name of a parameter: its path without the final component.
    pub fn block_of(name: &str) -> &str {
        name.rsplit_once('.').map(|(b, _)| b).unwrap_or(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_values_and_names() {
        let build = |seed| {
            let pb = ParamBuilder::new(seed, DType::F32, &Device::Cpu);
            let a = pb
                .pp("a")
                .get((3, 4), "w", Init::Kaiming { fan_in: 4 })
                .unwrap();
            pb.pp("a").buffer(3, "running", Init::Ones).unwrap();
            (
                a.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                pb.finish(),
            )
        };
        let (x, store) = build(1);
        assert_eq!(x, build(1).0);
        assert_ne!(x, build(2).0);
        assert_eq!(store.params().keys().collect::<Vec<_>>(), ["a.w"]);
        assert_eq!(store.buffers().keys().collect::<Vec<_>>(), ["a.running"]);
        assert_eq!(store.num_scalars(), 12);
        assert_eq!(ParamStore::block_of("a.b.weight"), "a.b");
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let pb = ParamBuilder::new(3, DType::F32, &Device::Cpu);
        pb.get(5, "w", Init::Kaiming { fan_in: 5 }).unwrap();
        let store = pb.finish();
        let snap = store.snapshot().unwrap();
        let w = &store.params()["w"];
        w.set(&w.as_tensor().zeros_like().unwrap()).unwrap();
        store.restore(&snap).unwrap();
        assert_eq!(
            w.as_tensor().to_vec1::<f32>().unwrap(),
            snap["w"].to_vec1::<f32>().unwrap()
        );
        assert!(store.restore(&BTreeMap::new()).is_err());
    }
}
