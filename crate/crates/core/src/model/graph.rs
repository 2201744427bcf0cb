//! Building the network on an autodiff tape.

use recnet_tensor::{BatchStats, Gradients, Tape, Tensor, TensorError, Var, BN_EPS};

use super::profile::{LayerOp, LayerSpec, ModelProfile};
use super::weights::{is_running_stat, ModelWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, gradients tracked, running estimates collected.
    Train,
    /// Running statistics, no gradients.
    Eval,
}

/// One forward pass over a set of weights. Parameters are placed on the tape
/// once, so every leg that runs through the same [`Graph`] shares them.
pub struct Graph<'w> {
    pub tape: Tape<f32>,
    weights: &'w ModelWeights,
    profile: ModelProfile,
    vars: Vec<Option<Var>>,
    mode: Mode,
    stats: Vec<(String, BatchStats<f32>)>,
    trace: Vec<(String, Vec<usize>)>,
}

fn layer_err(layer: &str) -> impl FnOnce(TensorError) -> Error + '_ {
    move |source| Error::Layer {
        layer: layer.to_string(),
        source,
    }
}

impl<'w> Graph<'w> {
    pub fn new(weights: &'w ModelWeights, mode: Mode) -> Self {
        let mut tape = Tape::new();
        let train = mode == Mode::Train;
        let vars = weights
            .tensors()
            .iter()
            .map(|t| {
                if is_running_stat(&t.name) {
                    None
                } else {
                    Some(tape.leaf(t.tensor.clone(), train))
                }
            })
            .collect();
        Self {
            tape,
            weights,
            profile: weights.profile(),
            vars,
            mode,
            stats: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    /// `(layer, output shape)` for every layer run so far.
    pub fn trace(&self) -> &[(String, Vec<usize>)] {
        &self.trace
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.weights
            .position(name)
            .and_then(|i| self.vars[i])
            .ok_or_else(|| Error::Lookup(format!("no trainable tensor named {name}")))
    }

    /// Stacks normalized images into an `[n, 1, h, w]` constant.
    pub fn input(&mut self, images: &[&[f32]]) -> Result<Var> {
        let (c, h, w) = self.profile.input;
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.len() != c * h * w {
                return Err(Error::Layer {
                    layer: "input".into(),
                    source: TensorError::ShapeMismatch {
                        op: "input",
                        expected: vec![c, h, w],
                        got: vec![img.len()],
                    },
                });
            }
            data.extend_from_slice(img);
        }
        let t = Tensor::new(&[images.len(), c, h, w], data)?;
        Ok(self.tape.constant(t))
    }

    fn layer(&mut self, spec: &LayerSpec, x: Var) -> Result<Var> {
        let name = spec.name.as_str();
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        let mut y = match spec.op {
            LayerOp::Conv(s) => self.tape.conv2d(x, w, b, s),
            LayerOp::ConvTranspose(s) => self.tape.conv_transpose2d(x, w, b, s),
        }
        .map_err(layer_err(name))?;
        if spec.batch_norm {
            let gamma = self.param(&format!("{name}.bn.gamma"))?;
            let beta = self.param(&format!("{name}.bn.beta"))?;
            let eps = BN_EPS as f32;
            y = match self.mode {
                Mode::Train => {
                    let (y, stats) = self.tape.batch_norm_train(y, gamma, beta, eps).map_err(layer_err(name))?;
                    self.stats.push((name.to_string(), stats));
                    y
                }
                Mode::Eval => {
                    let mean = self.weights.tensor(&format!("{name}.bn.running_mean"))?.data();
                    let var = self.weights.tensor(&format!("{name}.bn.running_var"))?.data();
                    self.tape
                        .batch_norm_eval(y, gamma, beta, mean, var, eps)
                        .map_err(layer_err(name))?
                }
            };
        }
        if spec.activation {
            let a = self.param(&format!("{name}.prelu"))?;
            y = self.tape.prelu(y, a).map_err(layer_err(name))?;
        }
        let shape = self.tape.shape(y)[1..].to_vec();
        self.trace.push((spec.name.clone(), shape));
        Ok(y)
    }

    /// `[n, 1, h, w]` → `[n, c, w]` bottleneck.
    pub fn encode(&mut self, x: Var) -> Result<Var> {
        let layers = self.profile.encoder.clone();
        let mut y = x;
        for spec in &layers {
            y = self.layer(spec, y)?;
        }
        let n = self.tape.shape(y)[0];
        let (c, w) = self.profile.bottleneck;
        self.tape.reshape(y, &[n, c, w]).map_err(layer_err("bottleneck"))
    }

    /// `[n, c, w]` → `[n, 1, h, w]`, unclamped.
    pub fn decode(&mut self, beta: Var) -> Result<Var> {
        let n = self.tape.shape(beta)[0];
        let (c, w) = self.profile.bottleneck;
        let mut y = self.tape.reshape(beta, &[n, c, 1, w]).map_err(layer_err("bottleneck"))?;
        let layers = self.profile.decoder.clone();
        for spec in &layers {
            y = self.layer(spec, y)?;
        }
        Ok(y)
    }

    /// Similarity in (0, 1) of two `[n, c, w]` bottlenecks, shape `[n]`.
    pub fn tail(&mut self, beta1: Var, beta2: Var) -> Result<Var> {
        let delta = self.tape.sub(beta1, beta2).map_err(layer_err("tail.delta"))?;
        let n = self.tape.shape(delta)[0];
        let (c, w) = self.profile.bottleneck;
        let mut y = self.tape.reshape(delta, &[n, 1, c, w]).map_err(layer_err("tail.delta"))?;
        let layers = self.profile.tail.clone();
        for spec in &layers {
            y = self.layer(spec, y)?;
        }
        let flat = self
            .tape
            .reshape(y, &[n, self.profile.dense_in])
            .map_err(layer_err("tail.dense"))?;
        let w = self.param("tail.dense.weight")?;
        let b = self.param("tail.dense.bias")?;
        let logit = self.tape.linear(flat, w, b).map_err(layer_err("tail.dense"))?;
        self.trace.push(("tail.dense".into(), vec![1]));
        let logit = self.tape.reshape(logit, &[n]).map_err(layer_err("tail.dense"))?;
        Ok(self.tape.sigmoid(logit))
    }

    /// Both encoder legs, the decoder on the first leg and the tail.
    /// Returns `(reconstruction, similarity, beta1, beta2)`.
    pub fn siamese(&mut self, x1: Var, x2: Var) -> Result<(Var, Var, Var, Var)> {
        let b1 = self.encode(x1)?;
        let b2 = self.encode(x2)?;
        let recon = self.decode(b1)?;
        let c = self.tail(b1, b2)?;
        Ok((recon, c, b1, b2))
    }

    /// Gradients of the trainable tensors in [`ModelWeights::trainable`]
    /// order; parameters the loss does not reach get zeros.
    pub fn parameter_grads(&self, grads: &mut Gradients<f32>) -> Vec<Tensor<f32>> {
        self.weights
            .tensors()
            .iter()
            .zip(&self.vars)
            .filter_map(|(t, v)| {
                v.map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.tensor.shape())))
            })
            .collect()
    }

    /// Batch statistics gathered in train mode, in the order layers ran.
    pub fn into_batch_stats(self) -> Vec<(String, BatchStats<f32>)> {
        self.stats
    }
}
