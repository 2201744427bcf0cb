//! End-to-end optimization of the Siamese autoencoder.

mod sequence;
mod synthetic;

pub use sequence::{
    sample_pairs, Dataset, PairPool, ScanEntry, ScanPair, ScanSequence, ScanSource, DEFAULT_SCAN_PERIOD,
};
pub use synthetic::{make_synthetic_sequence, observe, scene_points, SceneSpec, Trajectory};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet_tensor::{Adam, AdamConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_term, LossConfig, LossReport};
use crate::model::{Graph, Mode, ModelWeights, ProfileKind};
use crate::pointcloud::Pose;
use crate::tensorfile::{self, NamedTensor};

/// Sequence split used for KITTI odometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPreset {
    pub train: &'static [&'static str],
    pub validation: &'static [&'static str],
    pub evaluation: &'static [&'static str],
}

pub const KITTI_SPLIT: SplitPreset = SplitPreset {
    train: &["03", "04", "05", "06", "07", "08", "09", "10"],
    validation: &["02"],
    evaluation: &["00"],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` at step 1 down to zero at `steps`.
    Cosine,
}

impl LrSchedule {
    /// Learning rate for 1-based `step` of a `total`-step run.
    pub fn rate(self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (step.saturating_sub(1)) as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: ProfileKind,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Pairs at most this far apart (meters) count as near.
    pub r_pos: f64,
    /// Pairs at least this far apart (meters) count as far.
    pub r_neg: f64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// CSV loss log, one row per step.
    pub log_path: Option<PathBuf>,
    /// Steps between progress messages; 0 disables them.
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: ProfileKind::Mini,
            loss: LossConfig::default(),
            learning_rate: 3e-3,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 8,
            steps: 2000,
            seed: 0,
            r_pos: 5.0,
            r_neg: 20.0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            log_path: None,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.r_pos >= 0.0 && self.r_pos < self.r_neg) {
            return Err(Error::Config(format!(
                "need 0 <= r_pos < r_neg, got r_pos={} r_neg={}",
                self.r_pos, self.r_neg
            )));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_interval is set but checkpoint_dir is not".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}

/// Stream used for pair sampling, kept apart from weight initialization.
const PAIR_STREAM: u64 = 1;

fn check_dataset(data: &Dataset, profile: ProfileKind) -> Result<()> {
    let (_, h, w) = profile.profile().input;
    if data.projection.height != h || data.projection.width != w {
        return Err(Error::Profile(format!(
            "{profile} model needs {h}x{w} range images, dataset has {}x{}",
            data.projection.height, data.projection.width
        )));
    }
    Ok(())
}

/// Written next to the weight and optimizer files of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointInfo {
    pub step: u64,
    pub profile: ProfileKind,
    pub weights: PathBuf,
    pub optimizer: PathBuf,
    pub optimizer_step: u64,
    pub rng_seed: u64,
    pub rng_stream: u64,
    /// ChaCha word position, decimal (exceeds TOML's integer range).
    pub rng_word_pos: String,
}

/// Training state: weights, optimizer moments, pair sampler and step count.
pub struct Trainer {
    pub config: TrainConfig,
    pub weights: ModelWeights,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    pool: PairPool,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        let weights = ModelWeights::init(config.profile, config.seed);
        Self::with_weights(config, weights, data)
    }

    pub fn with_weights(config: TrainConfig, weights: ModelWeights, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if weights.profile_kind() != config.profile {
            return Err(Error::Profile(format!(
                "weights are {}, config asks for {}",
                weights.profile_kind(),
                config.profile
            )));
        }
        check_dataset(data, config.profile)?;
        let pool = PairPool::new(&data.poses, config.r_pos, config.r_neg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(PAIR_STREAM);
        let adam = Adam::new(AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        });
        Ok(Self {
            config,
            weights,
            adam,
            rng,
            pool,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step on a freshly sampled batch. Returns the loss
    /// measured before the update.
    pub fn step(&mut self, data: &Dataset) -> Result<LossReport> {
        let step = self.step + 1;
        let pairs = self.pool.sample(self.config.batch_size, &mut self.rng);
        let first: Vec<&[f32]> = pairs.iter().map(|p| data.images[p.first].as_slice()).collect();
        let second: Vec<&[f32]> = pairs.iter().map(|p| data.images[p.second].as_slice()).collect();
        let targets: Vec<f32> = pairs.iter().map(|p| p.target(self.config.loss.m) as f32).collect();

        let (report, grads, stats) = {
            let mut g = Graph::new(&self.weights, Mode::Train);
            let x1 = g.input(&first)?;
            let x2 = g.input(&second)?;
            let (recon, c_pred, _, _) = g.siamese(x1, x2)?;
            let c_target = g.tape.constant(Tensor::new(&[pairs.len()], targets)?);
            let image = g.tape.reshape(x1, g.tape.shape(recon).to_vec().as_slice())?;
            let loss = total_term(&mut g.tape, image, recon, c_target, c_pred, &self.config.loss)?;
            let report = loss.report(&g.tape);
            if let Some(component) = report.non_finite_component() {
                return Err(Error::NonFinite { step, component });
            }
            let mut grads = g.tape.backward(loss.total)?;
            let grads = g.parameter_grads(&mut grads);
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::NonFinite { step, component: "gradient" });
            }
            (report, grads, g.into_batch_stats())
        };

        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        self.adam.config.lr = self.config.lr_schedule.rate(self.config.learning_rate, step, self.config.steps);
        self.adam.step(&mut self.weights.trainable_mut(), &grad_refs)?;
        for (layer, s) in &stats {
            self.weights.update_running_stats(layer, s)?;
        }
        self.step = step;
        Ok(report)
    }

    /// Runs until `config.steps`, writing the CSV log and checkpoints as
    /// configured. Returns the per-step reports of this call.
    pub fn run(&mut self, data: &Dataset) -> Result<Vec<LossReport>> {
        let mut log = match &self.config.log_path {
            Some(p) => {
                let fresh = self.step == 0 || !p.exists();
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?;
                let mut w = std::io::BufWriter::new(file);
                if fresh {
                    writeln!(w, "{}", LossReport::csv_header()).map_err(|e| Error::io(p, e))?;
                }
                Some((p.clone(), w))
            }
            None => None,
        };
        let mut reports = Vec::new();
        while self.step < self.config.steps {
            let report = self.step(data)?;
            reports.push(report);
            if let Some((p, w)) = &mut log {
                writeln!(w, "{}", report.csv_row(self.step)).map_err(|e| Error::io(p.as_path(), e))?;
            }
            if self.config.log_interval > 0 && self.step % self.config.log_interval == 0 {
                log::info!(
                    "step {}: total {:.5} (mse {:.5}, grad {:.5}, pr {:.5})",
                    self.step,
                    report.total,
                    report.l_mse,
                    report.l_grad,
                    report.l_pr
                );
            }
            if self.config.checkpoint_interval > 0 && self.step % self.config.checkpoint_interval == 0 {
                let dir = self.config.checkpoint_dir.clone().expect("validated");
                let path = self.save_checkpoint(&dir)?;
                log::info!("checkpoint {}", path.display());
            }
        }
        if let Some((p, mut w)) = log {
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        Ok(reports)
    }

    fn optimizer_tensors(&self) -> Vec<NamedTensor> {
        let names: Vec<&str> = self
            .weights
            .trainable()
            .into_iter()
            .map(|i| self.weights.tensors()[i].name.as_str())
            .collect();
        let mut out = Vec::new();
        for (prefix, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (name, t) in names.iter().zip(moments) {
                out.push(NamedTensor {
                    name: format!("{prefix}.{name}"),
                    tensor: t.clone(),
                });
            }
        }
        out
    }

    /// Writes `ckpt-<step>.rwts`, `ckpt-<step>.optim.rwts` and the
    /// `ckpt-<step>.toml` sidecar; returns the sidecar path.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("ckpt-{:06}", self.step);
        let weights = PathBuf::from(format!("{stem}.rwts"));
        let optimizer = PathBuf::from(format!("{stem}.optim.rwts"));
        crate::model::save_weights(&self.weights, dir.join(&weights))?;
        tensorfile::write_tensors(dir.join(&optimizer), self.config.profile.id(), &self.optimizer_tensors())?;
        let info = CheckpointInfo {
            step: self.step,
            profile: self.config.profile,
            weights,
            optimizer,
            optimizer_step: self.adam.step,
            rng_seed: self.config.seed,
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        };
        let sidecar = dir.join(format!("{stem}.toml"));
        let text = toml::to_string(&info).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
        Ok(sidecar)
    }

    /// Restores the state written by [`save_checkpoint`](Self::save_checkpoint).
    pub fn resume(config: TrainConfig, sidecar: impl AsRef<Path>, data: &Dataset) -> Result<Self> {
        let sidecar = sidecar.as_ref();
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let info: CheckpointInfo = toml::from_str(&text).map_err(|e| Error::Parse {
            path: sidecar.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        if info.profile != config.profile {
            return Err(Error::Profile(format!(
                "checkpoint is {}, config asks for {}",
                info.profile, config.profile
            )));
        }
        let base = sidecar.parent().unwrap_or(Path::new("."));
        let weights = crate::model::load_weights_for(base.join(&info.weights), config.profile)?;
        let mut trainer = Self::with_weights(config, weights, data)?;

        let (_, tensors) = tensorfile::read_tensors(base.join(&info.optimizer))?;
        let trainable = trainer.weights.trainable();
        let n = trainable.len();
        if !tensors.is_empty() {
            if tensors.len() != 2 * n {
                return Err(Error::Profile(format!("optimizer state has {} tensors, expected {}", tensors.len(), 2 * n)));
            }
            for (k, t) in tensors.iter().enumerate() {
                let name = &trainer.weights.tensors()[trainable[k % n]].name;
                let expected = format!("{}.{name}", if k < n { "m" } else { "v" });
                if t.name != expected {
                    return Err(Error::Profile(format!("optimizer tensor {k} is {}, expected {expected}", t.name)));
                }
            }
            let mut it = tensors.into_iter().map(|t| t.tensor);
            trainer.adam.m = it.by_ref().take(n).collect();
            trainer.adam.v = it.collect();
        }
        trainer.adam.step = info.optimizer_step;
        let word_pos: u128 = info
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng_word_pos {:?}", info.rng_word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(info.rng_seed);
        rng.set_stream(info.rng_stream);
        rng.set_word_pos(word_pos);
        trainer.rng = rng;
        trainer.step = info.step;
        Ok(trainer)
    }

    pub fn into_weights(self) -> ModelWeights {
        self.weights
    }
}

/// Trains from scratch and returns the final weights with the loss log.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(ModelWeights, Vec<LossReport>)> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let log = trainer.run(data)?;
    Ok((trainer.into_weights(), log))
}

/// Anything that maps an image pair to (reconstruction of the first, similarity).
pub trait PairModel {
    fn forward_pairs(&self, first: &[&[f32]], second: &[&[f32]]) -> Result<(Vec<Vec<f32>>, Vec<f32>)>;
}

impl PairModel for ModelWeights {
    fn forward_pairs(&self, first: &[&[f32]], second: &[&[f32]]) -> Result<(Vec<Vec<f32>>, Vec<f32>)> {
        let mut g = Graph::new(self, Mode::Eval);
        let x1 = g.input(first)?;
        let x2 = g.input(second)?;
        let (recon, c, _, _) = g.siamese(x1, x2)?;
        let per = self.profile().input_len();
        let images = g.tape.value(recon).data().chunks(per).map(|c| c.to_vec()).collect();
        Ok((images, g.tape.value(c).data().to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub mean_mse: f64,
    pub mean_abs_similarity_error: f64,
    pub pairs: usize,
}

/// Seed of the fixed validation pairing.
pub const VALIDATION_SEED: u64 = 0x5eed;

/// Pairs every scan with one partner drawn by a fixed-seed generator.
pub fn validation_pairs(poses: &[Pose]) -> Vec<ScanPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let n = poses.len();
    (0..n)
        .filter(|_| n > 1)
        .map(|i| {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            ScanPair {
                first: i,
                second: j,
                distance: poses[i].distance(&poses[j]),
            }
        })
        .collect()
}

/// Eval-mode reconstruction error and similarity error over
/// [`validation_pairs`]. Reconstructions are compared unclamped.
pub fn validate(model: &impl PairModel, data: &Dataset, loss: &LossConfig) -> Result<ValidationReport> {
    let pairs = validation_pairs(&data.poses);
    evaluate_pairs(model, data, &pairs, loss)
}

/// Like [`validate`] but over caller-chosen pairs.
pub fn evaluate_pairs(model: &impl PairModel, data: &Dataset, pairs: &[ScanPair], loss: &LossConfig) -> Result<ValidationReport> {
    const CHUNK: usize = 8;
    let (mut mse, mut err) = (0.0, 0.0);
    for chunk in pairs.chunks(CHUNK) {
        let first: Vec<&[f32]> = chunk.iter().map(|p| data.images[p.first].as_slice()).collect();
        let second: Vec<&[f32]> = chunk.iter().map(|p| data.images[p.second].as_slice()).collect();
        let (recon, c) = model.forward_pairs(&first, &second)?;
        for ((p, r), c) in chunk.iter().zip(&recon).zip(&c) {
            let img = &data.images[p.first];
            mse += img.iter().zip(r).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / img.len() as f64;
            err += (p.target(loss.m) - *c as f64).abs();
        }
    }
    let n = pairs.len().max(1) as f64;
    Ok(ValidationReport {
        mean_mse: mse / n,
        mean_abs_similarity_error: err / n,
        pairs: pairs.len(),
    })
}
