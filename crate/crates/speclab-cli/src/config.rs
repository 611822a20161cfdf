//! The distillation run configuration and the JSON document schemas shared
//! by commands: spectral profiles, layer selections, and the dynamics
//! report.
//!
//! `RunConfig` is validated strictly: unknown keys anywhere in the document
//! are rejected, and the error names the full key path so a typo like
//! `distill.alpa` is caught before any training starts. Every section except
//! `io` can be omitted entirely; the defaults describe a complete toy
//! experiment whose models derive their init seeds from the data seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use speclab::distill::DistillConfig;
use speclab::spectral::ModelProfile;
use speclab::tinyvit::model::ModelConfig;

use crate::error::CliError;

/// Offset added to `data.seed` for the default teacher's init seed, keeping
/// the weight draws decorrelated from the dataset.
pub const TEACHER_SEED_OFFSET: u64 = 100;
/// Offset added to `data.seed` for the default student's init seed.
pub const STUDENT_SEED_OFFSET: u64 = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub data: DataSection,
    pub io: IoSection,
}

/// Teacher and student sizes. Omitted models fall back to the shipped
/// defaults with seeds derived from the data seed, so a config that only
/// names an output directory still describes a full experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<ModelConfig>,
}

/// Loss weights plus the alignment budget. The loss defaults are the shipped
/// distillation recipe; `top_k` is the number of teacher layers picked by
/// intensity for feature alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.9
}
fn default_beta() -> f64 {
    0.2
}
fn default_top_k() -> usize {
    2
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            alpha: default_alpha(),
            beta: default_beta(),
            top_k: default_top_k(),
        }
    }
}

impl DistillSection {
    /// The loss-side part of this section.
    pub fn loss_config(&self) -> DistillConfig {
        DistillConfig {
            temperature: self.temperature,
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// Dataset size and optimization schedule. One schedule covers all three
/// training runs of a distillation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_seed() -> u64 {
    7
}
fn default_count() -> usize {
    512
}
fn default_epochs() -> usize {
    24
}
fn default_lr() -> f64 {
    2e-3
}
fn default_batch() -> usize {
    32
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            count: default_count(),
            epochs: default_epochs(),
            lr: default_lr(),
            batch: default_batch(),
        }
    }
}

/// Where artifacts go and, optionally, where a pre-trained teacher comes
/// from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// The teacher to use, explicit or derived from the data seed.
    pub fn teacher_config(&self) -> ModelConfig {
        self.model
            .teacher
            .unwrap_or_else(|| ModelConfig::teacher_default(TEACHER_SEED_OFFSET + self.data.seed))
    }

    /// The student to use, explicit or derived from the data seed.
    pub fn student_config(&self) -> ModelConfig {
        self.model
            .student
            .unwrap_or_else(|| ModelConfig::student_default(STUDENT_SEED_OFFSET + self.data.seed))
    }
}

/// Parses and schema-checks a run config. Unknown keys and type mismatches
/// are reported with their full key path.
pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        CliError::Usage(format!(
            "config {}: invalid at key path '{}': {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    Ok(cfg)
}

/// On-disk schema of a spectral profile, as written by `analyze` and
/// `distill` and read back by `histogram`, `select`, and `compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileDoc {
    pub intensities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ProfileDoc {
    pub fn from_profile(p: &ModelProfile) -> Self {
        Self {
            intensities: p.intensities.clone(),
            labels: p.labels.clone(),
        }
    }

    pub fn to_profile(&self) -> ModelProfile {
        let mut p = ModelProfile::from_intensities(self.intensities.clone());
        p.labels = self.labels.clone();
        p
    }
}

/// Reads a profile document, reporting parse problems as data errors.
pub fn load_profile(path: &Path) -> Result<ProfileDoc, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read profile {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("profile {}: {e}", path.display())))
}

/// On-disk schema of a layer selection (`selection.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub teacher_layers: Vec<usize>,
    pub student_layers: Vec<usize>,
}

/// The dynamics report of a distillation run (`dynamics.json`): what was
/// aligned, how the three models score, and how far each student's profile
/// sits from the teacher's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub selection: SelectionDoc,
    pub accuracy: AccuracyReport,
    pub profile_distance: DistanceReport,
    pub fft_loss: FftLossReport,
}

/// Held-out accuracy of each model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub teacher: f64,
    pub baseline: f64,
    pub distilled: f64,
}

/// Distance from the teacher's profile to each student's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub baseline: f64,
    pub distilled: f64,
}

/// Mean alignment loss of the distilled run over its first and last epoch;
/// null when the run had no steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FftLossReport {
    pub first_epoch_mean: Option<f64>,
    pub last_epoch_mean: Option<f64>,
}
