//! TOML run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected. Command-line flags are applied on top of the parsed file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snuffy_core::data::SynthConfig;
use snuffy_core::training::TrainConfig;

use crate::error::{Error, Result};
use crate::experiments::CvConfig;
use crate::model::ModelKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub simulate: SimulateSection,
    pub verify: VerifySection,
    pub synth: SynthSection,
    pub cv: CvConfig,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Subcommand the configuration was last used with.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Root under which run directories are created.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Run directory name; defaults to the subcommand.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub model: ModelKind,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            command: None,
            out_dir: None,
            name: None,
            seed: 0,
            model: ModelKind::Snuffy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// MIL CSV file or embedding directory used for training and CV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Held-out dataset for `eval`; defaults to `path`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_path: Option<PathBuf>,
    /// z-score features with training statistics.
    pub normalize: bool,
    /// Fraction of bags held out for early stopping in `train`.
    pub val_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            eval_path: None,
            normalize: true,
            val_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub lambda_top: usize,
    pub lambda_r: usize,
    pub trials: usize,
    pub c: Vec<f64>,
    /// Covered patches that end a trial; defaults to `⌈(n−1)/2⌉`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_target: Option<usize>,
    /// Count the top set as covered from the start.
    pub count_top: bool,
    /// Layer-count surface over `grid_n × grid_lambda_r`; empty skips it.
    pub grid_n: Vec<usize>,
    pub grid_lambda_r: Vec<usize>,
    pub grid_trials: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n: 9000,
            lambda_top: 200,
            lambda_r: 700,
            trials: 20000,
            c: vec![0.5, 1.0, 2.0],
            coverage_target: None,
            count_top: true,
            grid_n: Vec::new(),
            grid_lambda_r: Vec::new(),
            grid_trials: 200,
        }
    }
}

/// `"auto"` or a fixed number of layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSpec {
    Auto(AutoKeyword),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl std::str::FromStr for LayerSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(LayerSpec::Auto(AutoKeyword::Auto));
        }
        s.parse()
            .map(LayerSpec::Count)
            .map_err(|_| format!("expected `auto` or a layer count, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n: usize,
    pub lambda_top: usize,
    pub lambda_r: usize,
    /// `"auto"` adds layers until the coverage reaches `⌈(n−1)/2⌉`.
    pub layers: LayerSpec,
    /// Cap on the number of layers drawn in auto mode.
    pub max_layers: usize,
    /// Explicit top set; defaults to patches `0..lambda_top`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_set: Option<Vec<usize>>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            n: 9000,
            lambda_top: 200,
            lambda_r: 700,
            layers: LayerSpec::Auto(AutoKeyword::Auto),
            max_layers: 64,
            top_set: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_bags: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub dim: usize,
    pub witness_rate: f64,
    pub separation: f64,
    /// `csv` or `embeddings`.
    pub format: SynthFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthFormat {
    Csv,
    Embeddings,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_bags: 200,
            k_min: 50,
            k_max: 100,
            dim: 8,
            witness_rate: 0.05,
            separation: 2.0,
            format: SynthFormat::Csv,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_bags: self.n_bags,
            k_min: self.k_min,
            k_max: self.k_max,
            dim: self.dim,
            witness_rate: self.witness_rate,
            separation: self.separation,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Directory holding the checkpoint archive (`model.json`/`model.bin`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Random models checked.
    pub models: usize,
    pub dim: usize,
    pub bag_size: usize,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            models: 4,
            dim: 4,
            bag_size: 7,
            tolerance: 1e-5,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
