use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FileFormat, SynthTask};
use crate::error::{Error, Result};
use crate::landscape::{MaximizerConfig, SurfaceFormat};
use crate::metrics::EvalConfig;
use crate::models::Architecture;
use crate::objective::Reduction;
use crate::train::TrainConfig;

/// Which part of a split dataset a command works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Test,
}

impl std::str::FromStr for DataSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(DataSplit::Train),
            "test" => Ok(DataSplit::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub split_ratio: f64,
    /// Eightfold flip/rotation augmentation of the train split.
    pub augment: bool,
    /// Crop both splits into square patches of this size before augmenting.
    pub patch_size: Option<usize>,
    pub patch_overlap: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            split_ratio: 0.7,
            augment: false,
            patch_size: None,
            patch_overlap: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub noise: Option<(f64, f64)>,
    pub format: FileFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task: SynthTask::Blobs,
            count: 64,
            size: 32,
            channels: 1,
            noise: None,
            format: FileFormat::Ftsr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub depth: usize,
    pub base_channels: usize,
    /// Resskip only; defaults to `depth - s` blocks at stage `s`.
    pub residual_blocks_per_skip: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Unet,
            depth: 4,
            base_channels: 64,
            residual_blocks_per_skip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    pub n: usize,
    pub r: f64,
    pub on: DataSplit,
    pub format: SurfaceFormat,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            n: 40,
            r: 0.5,
            on: DataSplit::Train,
            format: SurfaceFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpnessConfig {
    pub epsilons: Vec<f64>,
    pub repeats: usize,
    pub maximizer: MaximizerConfig,
    pub on: DataSplit,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.2],
            repeats: 5,
            maximizer: MaximizerConfig::default(),
            on: DataSplit::Train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub metrics: EvalConfig,
    pub on: DataSplit,
    /// Directory of `<id>_pred.{ftsr,pgm}` files to score instead of running
    /// a checkpoint.
    pub predictions: Option<PathBuf>,
    pub save_predictions: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: EvalConfig::default(),
            on: DataSplit::Test,
            predictions: None,
            save_predictions: false,
        }
    }
}

/// Every setting of one invocation. Written verbatim to
/// `<out>/run_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub target_loss: Option<f64>,
    /// Write a checkpoint after every epoch.
    pub snapshots: bool,
    pub checkpoint: Option<PathBuf>,
    /// Loss reduction for surface, sharpness and eval; the checkpoint's
    /// training reduction when unset.
    pub reduction: Option<Reduction>,
    pub surface: SurfaceConfig,
    pub sharpness: SharpnessConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            out: PathBuf::from("run"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            target_loss: None,
            snapshots: false,
            checkpoint: None,
            reduction: None,
            surface: SurfaceConfig::default(),
            sharpness: SharpnessConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serialisable") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_config.json");
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
