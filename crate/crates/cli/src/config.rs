//! `--config` file: JSON overriding any subset of the defaults.

use std::path::Path;

use anyhow::Context;
use fefet_core::oracle::OracleConfig;
use fefet_core::readout::{CompareSpec, IvTrainSpec};
use fefet_core::surrogate::FnoTrainSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Square grid side for `generate`.
    pub grid: usize,
    /// Worker threads for `generate`.
    pub workers: usize,
    pub oracle: OracleConfig,
    pub fno: FnoTrainSpec,
    pub ivnet: IvTrainSpec,
    pub compare: CompareSpec,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            oracle: OracleConfig::default(),
            fno: FnoTrainSpec::default(),
            ivnet: IvTrainSpec::default(),
            compare: CompareSpec::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(fefet_core::Error::from)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_other_defaults() {
        let cfg: CliConfig = serde_json::from_str(r#"{"grid": 32, "fno": {"optim": {"epochs": 7}}}"#).unwrap();
        assert_eq!(cfg.grid, 32);
        assert_eq!(cfg.fno.optim.epochs, 7);
        assert_eq!(cfg.fno.optim.lr, FnoTrainSpec::default().optim.lr);
        assert_eq!(cfg.ivnet, IvTrainSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"gird": 32}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = CliConfig::default();
        let back: CliConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
