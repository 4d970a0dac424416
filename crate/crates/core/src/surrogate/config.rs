use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of lifted input channels: x, y, stack mask, FE mask, 3 scalars.
pub const N_INPUTS: usize = 7;
/// Number of predicted map channels.
pub const N_OUTPUTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnoConfig {
    pub modes_x: usize,
    pub modes_y: usize,
    pub width: usize,
    pub n_layers: usize,
    /// Hidden sizes of the pointwise lift before the Fourier layers.
    pub lift_hidden: Vec<usize>,
    pub proj_hidden: usize,
    pub activation: Activation,
    /// Grid size the model is trained at.
    pub train_resolution: usize,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            modes_x: 12,
            modes_y: 12,
            width: 32,
            n_layers: 4,
            lift_hidden: Vec::new(),
            proj_hidden: 128,
            activation: Activation::Gelu,
            train_resolution: 64,
        }
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.n_layers == 0 || self.proj_hidden == 0 {
            return Err(Error::Config("width, n_layers and proj_hidden must be positive".into()));
        }
        if self.modes_x == 0 || self.modes_y == 0 {
            return Err(Error::Config("at least one Fourier mode per axis is required".into()));
        }
        if self.lift_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("lift hidden sizes must be positive".into()));
        }
        Ok(())
    }

    /// Checks the retained modes fit a grid.
    pub fn check_grid(&self, nx: usize, ny: usize) -> Result<()> {
        for (axis, n) in [("x", nx), ("y", ny)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Config(format!("grid {axis} size {n} must be a power of two >= 8")));
            }
        }
        if 2 * self.modes_x > nx || 2 * self.modes_y > ny {
            return Err(Error::Config(format!(
                "modes ({}, {}) exceed half of the {nx}x{ny} grid",
                self.modes_x, self.modes_y
            )));
        }
        Ok(())
    }
}

/// Weights of the data, Poisson-residual and monotonicity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub data: f64,
    pub poisson: f64,
    pub mono: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            poisson: 0.05,
            mono: 1.0,
        }
    }
}

impl LossWeights {
    /// Pure data-driven baseline.
    pub fn data_only() -> Self {
        Self {
            data: 1.0,
            poisson: 0.0,
            mono: 0.0,
        }
    }

    pub fn is_physics_informed(&self) -> bool {
        self.poisson > 0.0 || self.mono > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.data, self.poisson, self.mono].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Adam with a cosine learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Whole trajectories per optimizer step.
    pub batch_trajectories: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 2e-3,
            lr_min: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_trajectories: 1,
            clip_norm: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_trajectories == 0 {
            return Err(Error::Config("epochs and batch_trajectories must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::Config(format!("need 0 <= lr_min <= lr, lr > 0 (got {}, {})", self.lr_min, self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        Ok(())
    }

    /// Cosine decay from `lr` at step 0 to `lr_min` at `total - 1`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let frac = step as f64 / (total - 1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}
