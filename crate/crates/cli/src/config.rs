//! Settings file for the `recnet` binary. Every key is optional; command-line
//! flags override whatever the file sets.

use std::path::Path;

use anyhow::{bail, Context};
use recnet::model::ProfileKind;
use recnet::projection::ProjectionConfig;
use recnet::training::{SceneSpec, TrainConfig};
use recnet::transmission::QuantizationMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Model and sensor geometry. Falls back to `train.profile`.
    pub profile: Option<ProfileKind>,
    pub projection: ProjectionOverrides,
    pub synthetic: SyntheticConfig,
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub encode: EncodeConfig,
    pub eval: EvalConfig,
}

/// Changes to the profile's sensor preset. Angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOverrides {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub fov_up_deg: Option<f64>,
    pub fov_down_deg: Option<f64>,
    pub min_range: Option<f32>,
    pub max_range: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    pub mode: QuantizationMode,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            mode: QuantizationMode::Float32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Neighbours per local feature.
    pub k: usize,
    /// Correspondence radius, meters.
    pub radius: f64,
    /// A retrieved place is correct within this many meters.
    pub gt_radius: f64,
    /// Similarity scale of the oracle tail, meters.
    pub m: f64,
    /// Number of evenly spaced thresholds on [0, 1].
    pub thresholds: usize,
    /// Records stamped before this become the map when no query file is given.
    pub map_seconds: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: recnet::metrics::DEFAULT_K,
            radius: recnet::metrics::CORR_RADIUS,
            gt_radius: recnet::retrieval::DEFAULT_GT_RADIUS,
            m: recnet::losses::LossConfig::default().m,
            thresholds: 101,
            map_seconds: recnet::retrieval::MAP_SECONDS,
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn profile(&self) -> ProfileKind {
        self.profile.unwrap_or(self.train.profile)
    }

    /// Fails when a profile was asked for explicitly and `found` differs.
    pub fn check_profile(&self, found: ProfileKind, what: &str) -> anyhow::Result<()> {
        match self.profile {
            Some(p) if p != found => bail!("profile mismatch: {what} is {found}, but {p} was requested"),
            _ => Ok(()),
        }
    }

    pub fn projection(&self) -> anyhow::Result<ProjectionConfig> {
        self.projection_for(self.profile())
    }

    /// The sensor preset of `kind` with the overrides applied.
    pub fn projection_for(&self, kind: ProfileKind) -> anyhow::Result<ProjectionConfig> {
        let o = &self.projection;
        let mut p = kind.projection();
        if let Some(w) = o.width {
            p.width = w;
        }
        if let Some(h) = o.height {
            p.height = h;
        }
        if let Some(up) = o.fov_up_deg {
            p.fov_up = up.to_radians() as f32;
        }
        if let Some(down) = o.fov_down_deg {
            p.fov_down = down.to_radians() as f32;
        }
        if let Some(r) = o.min_range {
            p.min_range = r;
        }
        if let Some(r) = o.max_range {
            p.max_range = r;
        }
        if let Err(e) = p.validate() {
            bail!("bad projection settings: {e}");
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable config: {e}"))
    }
}
