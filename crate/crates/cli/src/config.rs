use std::path::Path;

use dsglight::fitter::Weighting;
use dsglight::graphnet::TrainConfig;
use serde::Deserialize;

use crate::{CliError, CliResult};

/// Defaults read from `--config`; flags win over these, these win over built-ins.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub weighting: Option<Weighting>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub samples: Option<usize>,
    pub crops: Option<usize>,
    pub epochs: Option<usize>,
    /// Optimizer and loss settings; unspecified fields keep their defaults.
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// Flag, then config value, then the built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
