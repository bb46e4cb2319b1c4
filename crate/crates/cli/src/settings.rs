use std::fs;
use std::path::Path;

use ncdsearch_core::EngineConfig;

use crate::CliError;

/// Read a TOML config file (keys as in [`EngineConfig`]); no file means defaults.
pub fn load_config(path: Option<&Path>) -> Result<EngineConfig, CliError> {
    let Some(path) = path else {
        return Ok(EngineConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n_max_bins: Option<u32>,
    pub overlap_fraction: Option<f64>,
    pub alpha: Option<f64>,
    pub max_blocks_shown: Option<usize>,
    pub gtable_replicates: Option<usize>,
    pub rng_seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, mut config: EngineConfig) -> Result<EngineConfig, CliError> {
        if let Some(v) = self.n_max_bins {
            config.n_max_bins = v;
        }
        if let Some(v) = self.overlap_fraction {
            config.overlap_fraction = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.max_blocks_shown {
            config.max_blocks_shown = v;
        }
        if let Some(v) = self.gtable_replicates {
            config.gtable_replicates = v;
        }
        if let Some(v) = self.rng_seed {
            config.rng_seed = v;
        }
        config.validate()?;
        Ok(config)
    }
}
