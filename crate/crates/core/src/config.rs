use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IngestConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("overlap fraction {0} outside [0.01, 0.99]")]
    Overlap(f64),
    #[error("n_max_bins must be at least 1, got {0}")]
    NMax(u32),
    #[error("min_remainder_fraction {0} outside (0, 1]")]
    MinRemainder(f64),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("gtable_replicates must be at least 1000, got {0}")]
    Replicates(usize),
    #[error("max_blocks_shown must be at least 1")]
    MaxBlocks,
}

/// User-tunable engine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub n_max_bins: u32,
    pub overlap_fraction: f64,
    pub min_remainder_fraction: f64,
    pub alpha: f64,
    pub max_blocks_shown: usize,
    pub gtable_replicates: usize,
    pub rng_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_max_bins: 32,
            overlap_fraction: 0.10,
            min_remainder_fraction: 0.5,
            alpha: 0.05,
            max_blocks_shown: 50,
            gtable_replicates: 10_000,
            rng_seed: 20_090_101,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ingest().validate()?;
        check_alpha(self.alpha)?;
        if self.gtable_replicates < 1000 {
            return Err(ConfigError::Replicates(self.gtable_replicates));
        }
        if self.max_blocks_shown == 0 {
            return Err(ConfigError::MaxBlocks);
        }
        Ok(())
    }

    pub fn ingest(&self) -> IngestConfig {
        IngestConfig {
            n_max: self.n_max_bins,
            overlap_fraction: self.overlap_fraction,
            min_remainder_fraction: self.min_remainder_fraction,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ConfigError::Alpha(alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_values() {
        let bad = |f: fn(&mut EngineConfig)| {
            let mut c = EngineConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert_eq!(bad(|c| c.overlap_fraction = 0.0), ConfigError::Overlap(0.0));
        assert_eq!(bad(|c| c.overlap_fraction = 1.0), ConfigError::Overlap(1.0));
        assert_eq!(bad(|c| c.alpha = 1.5), ConfigError::Alpha(1.5));
        assert_eq!(bad(|c| c.n_max_bins = 0), ConfigError::NMax(0));
        assert_eq!(
            bad(|c| c.gtable_replicates = 10),
            ConfigError::Replicates(10)
        );
    }
}
