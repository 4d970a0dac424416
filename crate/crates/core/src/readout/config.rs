use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{Activation, OptimConfig};

/// Map channels the encoder consumes.
pub const MAP_CHANNELS: usize = 5;
/// Scalar inputs of the context branch.
pub const N_SCALARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvNetConfig {
    /// Output channels of each strided conv block.
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Hidden sizes of the scalar branch; the last must match the encoder.
    pub scalar_hidden: Vec<usize>,
    /// Initial value of both fusion weight vectors.
    pub fusion_init: f64,
    pub head_hidden: usize,
    pub n_vg: usize,
    pub activation: Activation,
}

impl Default for IvNetConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![16, 32, 64],
            kernel: 3,
            stride: 2,
            scalar_hidden: vec![64, 64],
            fusion_init: 0.5,
            head_hidden: 128,
            n_vg: 61,
            activation: Activation::Gelu,
        }
    }
}

impl IvNetConfig {
    pub fn feature_dim(&self) -> usize {
        self.encoder_channels.last().copied().unwrap_or(MAP_CHANNELS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.scalar_hidden.is_empty() {
            return Err(Error::Config("encoder and scalar branch need at least one layer each".into()));
        }
        if self.encoder_channels.contains(&0) || self.scalar_hidden.contains(&0) || self.head_hidden == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "kernel must be odd and stride positive (kernel {}, stride {})",
                self.kernel, self.stride
            )));
        }
        let s = *self.scalar_hidden.last().unwrap();
        if s != self.feature_dim() {
            return Err(Error::Config(format!(
                "fusion needs equal widths: encoder ends at {}, scalar branch at {s}",
                self.feature_dim()
            )));
        }
        if self.n_vg < 2 {
            return Err(Error::Config("n_vg must be at least 2".into()));
        }
        Ok(())
    }
}

/// Where the IV-Net's training maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    Oracle,
    #[default]
    Fno,
}

impl std::str::FromStr for MapSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(MapSource::Oracle),
            "fno" => Ok(MapSource::Fno),
            other => Err(Error::Usage(format!("unknown map source {other:?} (expected oracle or fno)"))),
        }
    }
}

/// Everything that determines an IV-Net training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvTrainSpec {
    pub ivnet: IvNetConfig,
    pub optim: OptimConfig,
    /// Samples per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub map_source: MapSource,
}

impl Default for IvTrainSpec {
    fn default() -> Self {
        Self {
            ivnet: IvNetConfig::default(),
            optim: OptimConfig {
                epochs: 300,
                lr: 2e-3,
                lr_min: 2e-5,
                ..OptimConfig::default()
            },
            batch_size: 8,
            seed: 0,
            map_source: MapSource::Fno,
        }
    }
}

impl IvTrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.ivnet.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        IvTrainSpec::default().validate().unwrap();
        assert_eq!(IvNetConfig::default().feature_dim(), 64);
    }

    #[test]
    fn fusion_width_mismatch_is_rejected() {
        let c = IvNetConfig {
            scalar_hidden: vec![64, 32],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = IvNetConfig {
            kernel: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn map_source_parses() {
        assert_eq!("oracle".parse::<MapSource>().unwrap(), MapSource::Oracle);
        assert!("tcad".parse::<MapSource>().is_err());
    }
}
