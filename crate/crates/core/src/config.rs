//! Experiment configuration: one TOML file describing the cell, the data,
//! the estimator, the loss and the training run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ecm::{EcmParams, EcmState, OcvPoly};
use crate::error::{Error, Result};
use crate::losses::{EcmSystem, LambdaBounds, LossConfig};
use crate::network::{NetworkShape, NormSpec};
use crate::train::{LossKind, TrainConfig};

/// The bundled default experiment.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub r0: f64,
    pub r1: f64,
    pub c: f64,
    pub capacity_ah: f64,
    pub initial_soc: f64,
    /// OCV coefficients file, one per line from the constant term up.
    /// Built-in curve when absent.
    #[serde(default)]
    pub ocv_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dt: f64,
    pub duration_s: f64,
    pub max_c_rate: f64,
    pub mean_segment_s: f64,
    pub net_soc_drop: f64,
    pub train_seeds: Vec<u64>,
    pub validation_seed: u64,
    /// Standard deviation of Gaussian noise added to training voltages.
    #[serde(default)]
    pub noise_sigma_v: f64,
    #[serde(default)]
    pub noise_seed: u64,
    /// Measured training traces; replace synthesis when non-empty.
    #[serde(default)]
    pub train_files: Vec<PathBuf>,
    /// Validation trace with `soc` and `vc_V` columns.
    #[serde(default)]
    pub validation_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub history: usize,
    pub init_seed: u64,
    #[serde(default)]
    pub norm: NormSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub rollout: usize,
    pub omega_g: Vec<f64>,
    #[serde(default)]
    pub omega_h: Vec<f64>,
    pub omega_f: Vec<f64>,
    /// Train with the multi-term residual loss instead.
    #[serde(default)]
    pub baseline: bool,
}

impl LossSection {
    pub fn weights(&self) -> LossConfig {
        LossConfig {
            rollout: self.rollout,
            omega_g: self.omega_g.clone(),
            omega_h: self.omega_h.clone(),
            omega_f: self.omega_f.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    /// Initial parameter estimates as a multiple of the truth.
    pub init_factor: f64,
    /// Box for `R1` and `C` as multiples of the truth.
    pub bound_low: f64,
    pub bound_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    pub windows: usize,
    pub history: usize,
    pub rollout: usize,
    /// Randomly chosen network weights to check (all lambda entries are
    /// always checked).
    pub sampled_weights: usize,
    pub seed: u64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub cell: CellSection,
    pub data: DataSection,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub identification: IdentificationSection,
    pub training: TrainConfig,
    pub compare: CompareSection,
    pub gradcheck: GradcheckSection,
    /// Directory relative paths are resolved against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source_name}: {}", e.message())))?;
        cfg.base_dir = PathBuf::from(".");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG, "default.toml").expect("bundled config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.true_params().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.cell.initial_soc) {
            return bad(format!("cell.initial_soc {} is outside [0, 1]", self.cell.initial_soc));
        }
        let d = &self.data;
        if !(d.dt > 0.0 && d.duration_s >= d.dt && d.max_c_rate > 0.0 && d.mean_segment_s >= d.dt) {
            return bad("data: need dt > 0, duration_s >= dt, max_c_rate > 0, mean_segment_s >= dt".into());
        }
        if !(d.noise_sigma_v >= 0.0) {
            return bad("data.noise_sigma_v must be >= 0".into());
        }
        if d.train_seeds.is_empty() && d.train_files.is_empty() {
            return bad("data: give train_seeds or train_files".into());
        }
        self.network.norm.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss
            .weights()
            .validate(&self.system_with(OcvPoly::default()))
            .map_err(|e| Error::Config(e.to_string()))?;
        let id = &self.identification;
        if !(id.init_factor > 0.0 && id.bound_low > 0.0 && id.bound_low < id.bound_high) {
            return bad("identification: need init_factor > 0 and 0 < bound_low < bound_high".into());
        }
        if !(id.bound_low..=id.bound_high).contains(&id.init_factor) {
            return bad("identification.init_factor must lie inside the bounds".into());
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return bad("training.batch_size must be at least 1".into());
        }
        t.adam().validate().map_err(|e| Error::Config(e.to_string()))?;
        let g = &self.gradcheck;
        if g.windows == 0 || g.rollout == 0 || !(g.step > 0.0) {
            return bad("gradcheck: need windows >= 1, rollout >= 1, step > 0".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn true_params(&self) -> Result<EcmParams> {
        let c = &self.cell;
        EcmParams::new(c.r0, c.r1, c.c, c.capacity_ah)
    }

    pub fn initial_state(&self) -> EcmState {
        EcmState::new(self.cell.initial_soc, 0.0)
    }

    pub fn ocv(&self) -> Result<OcvPoly> {
        match &self.cell.ocv_file {
            Some(p) => OcvPoly::load(&self.resolve(p)),
            None => Ok(OcvPoly::default()),
        }
    }

    fn system_with(&self, poly: OcvPoly) -> EcmSystem {
        EcmSystem {
            poly,
            capacity_ah: self.cell.capacity_ah,
        }
    }

    pub fn system(&self) -> Result<EcmSystem> {
        Ok(self.system_with(self.ocv()?))
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape::default()
    }

    pub fn bounds(&self) -> Result<LambdaBounds> {
        let id = &self.identification;
        LambdaBounds::from_rc_box(self.cell.r1, self.cell.c, id.bound_low, id.bound_high)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss_kind(),
            ..self.training.clone()
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.loss.baseline {
            LossKind::StandardPinn
        } else {
            LossKind::Integration
        }
    }

    /// `--seed` sets the weight-initialization and shuffling seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.network.init_seed = seed;
        self.training.shuffle_seed = seed;
    }

    /// Canonical TOML of everything that affects results. The output
    /// directory is left out so a run can be reproduced elsewhere.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        toml::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical_toml`], lowercase hex.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_toml().as_bytes()))
    }

    /// Hash of the settings that determine the training trajectory
    /// epoch by epoch; the total epoch count and checkpoint spacing only
    /// decide where it stops. A checkpoint can resume a run whose
    /// trajectory hash matches.
    pub fn trajectory_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.training.epochs = 0;
        c.training.checkpoint_every = 0;
        c.compare.epochs = 0;
        hex(&Sha256::digest(
            toml::to_string(&c).expect("config serializes").as_bytes(),
        ))
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::default_config()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
