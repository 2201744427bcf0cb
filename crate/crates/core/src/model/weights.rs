//! Parameter storage, initialization and persistence.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recnet_tensor::{BatchStats, Tensor, BN_MOMENTUM};

use super::profile::{ModelProfile, ProfileKind};
use crate::error::{Error, Result};
use crate::tensorfile::{self, NamedTensor};

/// Initial PReLU slope, also the negative-slope term of the init gain.
pub const PRELU_INIT: f32 = 0.25;

/// All tensors of one model. Trainable parameters and batch-norm running
/// statistics live side by side; the latter are recognised by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    profile: ProfileKind,
    tensors: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Names and shapes every weight file for `profile` must contain, in order.
pub fn layout(profile: &ModelProfile) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for layer in profile.layers() {
        let n = &layer.name;
        let c = layer.op.out_channels();
        out.push((format!("{n}.weight"), layer.op.weight_shape().to_vec()));
        out.push((format!("{n}.bias"), vec![c]));
        if layer.batch_norm {
            for s in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("{n}.bn.{s}"), vec![c]));
            }
        }
        if layer.activation {
            out.push((format!("{n}.prelu"), vec![1]));
        }
    }
    out.push(("tail.dense.weight".into(), vec![1, profile.dense_in]));
    out.push(("tail.dense.bias".into(), vec![1]));
    out
}

fn kaiming_bound(fan_in: f64) -> f64 {
    let a = PRELU_INIT as f64;
    (6.0 / ((1.0 + a * a) * fan_in)).sqrt()
}

impl ModelWeights {
    /// Kaiming-uniform kernels, zero biases, unit batch-norm scale.
    pub fn init(kind: ProfileKind, seed: u64) -> Self {
        let profile = kind.profile();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in: HashMap<String, f64> = profile
            .layers()
            .map(|l| (format!("{}.weight", l.name), l.op.fan_in()))
            .collect();
        fan_in.insert("tail.dense.weight".into(), profile.dense_in as f64);
        let tensors = layout(&profile)
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if let Some(&f) = fan_in.get(&name) {
                    let b = kaiming_bound(f);
                    Tensor::from_fn(&shape, |_| rng.random_range(-b..b) as f32)
                } else if name.ends_with(".prelu") {
                    Tensor::full(&shape, PRELU_INIT)
                } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                    Tensor::full(&shape, 1.0)
                } else {
                    Tensor::zeros(&shape)
                };
                NamedTensor { name, tensor }
            })
            .collect();
        Self::assemble(kind, tensors)
    }

    fn assemble(profile: ProfileKind, tensors: Vec<NamedTensor>) -> Self {
        let index = tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        Self {
            profile,
            tensors,
            index,
        }
    }

    /// Checks names and shapes against the profile layout.
    pub fn from_tensors(kind: ProfileKind, tensors: Vec<NamedTensor>) -> Result<Self> {
        let expected = layout(&kind.profile());
        let by_name: HashMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, shape) in &expected {
            match by_name.get(name.as_str()) {
                None => return Err(Error::Profile(format!("{kind} weights: missing tensor {name}"))),
                Some(t) if t.tensor.shape() != shape.as_slice() => {
                    return Err(Error::Profile(format!(
                        "{kind} weights: tensor {name} has shape {:?}, expected {shape:?}",
                        t.tensor.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if tensors.len() != expected.len() {
            let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
            let extra = tensors
                .iter()
                .find(|t| !known.contains(t.name.as_str()))
                .map(|t| t.name.clone())
                .unwrap_or_else(|| "duplicate tensor".into());
            return Err(Error::Profile(format!("{kind} weights: unexpected tensor {extra}")));
        }
        let mut by_name: HashMap<String, NamedTensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let ordered = expected
            .into_iter()
            .map(|(name, _)| by_name.remove(&name).expect("checked above"))
            .collect();
        Ok(Self::assemble(kind, ordered))
    }

    pub fn profile_kind(&self) -> ProfileKind {
        self.profile
    }

    pub fn profile(&self) -> ModelProfile {
        self.profile.profile()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.tensors[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index.get(name).map(|&i| &mut self.tensors[i].tensor)
    }

    pub(crate) fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Lookup(format!("no tensor named {name}")))
    }

    /// Indices of trainable tensors, in storage order.
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.tensors.len())
            .filter(|&i| !is_running_stat(&self.tensors[i].name))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|&i| self.tensors[i].tensor.len()).sum()
    }

    /// Mutable references to the trainable tensors, in [`trainable`](Self::trainable) order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        self.tensors
            .iter_mut()
            .filter(|t| !is_running_stat(&t.name))
            .map(|t| &mut t.tensor)
            .collect()
    }

    /// Folds batch statistics of a batch-norm layer into its running estimates.
    pub fn update_running_stats(&mut self, layer: &str, stats: &BatchStats<f32>) -> Result<()> {
        let m = BN_MOMENTUM as f32;
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let name = format!("{layer}.bn.{suffix}");
            let t = self
                .get_mut(&name)
                .ok_or_else(|| Error::Lookup(format!("no tensor named {name}")))?;
            if t.len() != batch.len() {
                return Err(Error::Profile(format!("{name}: {} batch statistics for {} channels", batch.len(), t.len())));
            }
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.tensor.all_finite())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        tensorfile::encode_tensors(self.profile.id(), &self.tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (id, tensors) = tensorfile::decode_tensors(bytes)?;
        Self::from_tensors(ProfileKind::from_id(id)?, tensors)
    }

    /// Loads a file and requires it to fit `kind`. Shapes are compared first so
    /// the error names the first tensor that does not fit.
    pub fn from_bytes_for(bytes: &[u8], kind: ProfileKind) -> Result<Self> {
        let (id, tensors) = tensorfile::decode_tensors(bytes)?;
        let weights = Self::from_tensors(kind, tensors)?;
        if id != kind.id() {
            return Err(Error::Profile(format!(
                "file is tagged with profile id {id}, expected {kind} ({})",
                kind.id()
            )));
        }
        Ok(weights)
    }
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    tensorfile::write_tensors(path, weights.profile.id(), &weights.tensors)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes)
}

pub fn load_weights_for(path: impl AsRef<Path>, kind: ProfileKind) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes_for(&bytes, kind)
}
