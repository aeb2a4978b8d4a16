//! TOML run configuration. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use actisleep_nn::StepDecay;
use serde::{Deserialize, Serialize};

use crate::cluster::DayEncoding;
use crate::error::{Error, Result};
use crate::io::atomic::read_string;
use crate::models::data::SplitConfig;
use crate::models::{DataConfig, MlpBaselineSpec, ModelKind, ModelSpec, MultiTaskCnnSpec, SequentialCnnSpec, TrainConfig};
use crate::synth::{AttackSchedule, PatientProfile};
use crate::types::DaytimeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainSection,
    pub models: ModelsConfig,
    pub cluster: ClusterConfig,
    pub daytime: DaytimeConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            generator: GeneratorConfig::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            train: TrainSection::default(),
            models: ModelsConfig::default(),
            cluster: ClusterConfig::default(),
            daytime: DaytimeConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_patients: usize,
    pub num_days: usize,
    /// Profile shared by every patient without an entry in `profiles`.
    pub profile: PatientProfile,
    /// Optional per-patient profiles; overrides `num_patients` when non-empty.
    pub profiles: Vec<PatientProfile>,
    pub attacks: Vec<AttackConfig>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_patients: 3,
            num_days: 20,
            profile: PatientProfile::default(),
            profiles: Vec::new(),
            attacks: Vec::new(),
        }
    }
}

/// Nightly attacks for one patient, at 02:00 on each listed day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Zero-based patient index.
    pub patient: usize,
    pub days: Vec<usize>,
    #[serde(default)]
    pub fragmentation: f64,
}

impl GeneratorConfig {
    pub fn profiles(&self) -> Vec<PatientProfile> {
        if self.profiles.is_empty() {
            vec![self.profile.clone(); self.num_patients]
        } else {
            self.profiles.clone()
        }
    }

    pub fn schedules(&self) -> Result<Vec<AttackSchedule>> {
        let n = self.profiles().len();
        let mut out = vec![AttackSchedule::none(); n];
        for a in &self.attacks {
            if a.patient >= n {
                return Err(Error::Config(format!(
                    "attack entry for patient {} but the cohort has {n} patients",
                    a.patient
                )));
            }
            if let Some(&d) = a.days.iter().find(|&&d| d >= self.num_days) {
                return Err(Error::Config(format!("attack day {d} beyond {} days", self.num_days)));
            }
            out[a.patient] = AttackSchedule::nightly(a.days.iter().copied(), a.fragmentation);
        }
        Ok(out)
    }
}

/// Training hyperparameters; the seed comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub momentum: f64,
    pub schedule: StepDecay,
    pub epochs: usize,
    pub class_weighting: bool,
    /// Per-state probability (Wake, FallingAsleep, Siesta, Sleep) that a
    /// training window is drawn in an epoch.
    pub class_keep: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            momentum: t.momentum,
            schedule: t.schedule,
            epochs: t.epochs,
            class_weighting: t.class_weighting,
            class_keep: vec![1.0 / 32.0, 1.0 / 8.0, 1.0 / 8.0, 1.0 / 32.0],
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            momentum: self.momentum,
            schedule: self.schedule,
            epochs: self.epochs,
            seed,
            class_weighting: self.class_weighting,
            class_keep: self.class_keep.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub seq_cnn: SequentialCnnSpec,
    pub mtl_cnn: MultiTaskCnnSpec,
    pub mlp: MlpBaselineSpec,
}

impl ModelsConfig {
    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::SeqCnn => ModelSpec::SeqCnn(self.seq_cnn.clone()),
            ModelKind::MtlCnn => ModelSpec::MtlCnn(self.mtl_cnn.clone()),
            ModelKind::Mlp => ModelSpec::Mlp(self.mlp.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub encoding: DayEncoding,
    pub k: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            encoding: DayEncoding::default(),
            k: 2,
        }
    }
}

/// Fallback locations used when the matching command-line flag is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        DaytimeConfig::new(self.daytime.day_start, self.daytime.day_end)?;
        for p in self.generator.profiles() {
            p.validate()?;
        }
        self.generator.schedules()?;
        if self.generator.num_days < 1 {
            return Err(Error::Config("generator.num_days must be at least 1".into()));
        }
        self.train.to_config(self.seed).validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        if self.cluster.k < 1 || self.cluster.encoding.downsample < 1 {
            return Err(Error::Config("cluster.k and cluster.encoding.downsample must be at least 1".into()));
        }
        Ok(())
    }
}
