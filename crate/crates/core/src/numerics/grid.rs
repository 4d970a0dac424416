//! Cell-centred 2D grids and scalar fields.
//!
//! The first axis (`x`, `nx` cells) runs laterally from source to drain, the
//! second axis (`y`, `ny` cells) runs vertically from the substrate contact up
//! to the gate. Storage is row-major with `y` fastest: `index = ix * ny + iy`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nanometres to metres.
pub const NM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Lateral cell size in nm.
    pub dx: f64,
    /// Vertical cell size in nm.
    pub dy: f64,
    /// Width of each source/drain end region in nm.
    pub sd_extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(64)
    }
}

impl GridSpec {
    /// 100 nm x 64 nm device domain sampled on `n x n` cells.
    pub fn square(n: usize) -> Self {
        Self {
            nx: n,
            ny: n,
            dx: 100.0 / n as f64,
            dy: 64.0 / n as f64,
            sd_extent: 15.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width_nm(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height_nm(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    /// Lateral coordinate of a cell centre in nm.
    pub fn x_center(&self, ix: usize) -> f64 {
        (ix as f64 + 0.5) * self.dx
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{name}={n} must be a power of two and at least 8"
                )));
            }
        }
        if !(self.dx > 0.0 && self.dy > 0.0) || !self.dx.is_finite() || !self.dy.is_finite() {
            return Err(Error::Config("cell sizes must be positive".into()));
        }
        if !(self.sd_extent >= 0.0 && 2.0 * self.sd_extent < self.width_nm()) {
            return Err(Error::Config(format!(
                "source/drain extent {} nm does not fit a {} nm domain",
                self.sd_extent,
                self.width_nm()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    Volt,
    CoulombPerM2,
    CoulombPerM3,
    AmperePerM2,
    /// log10 of A/m^2.
    Log10AmperePerM2,
    FaradPerM,
    Dimensionless,
}

/// A real scalar per cell on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl Field2D {
    pub fn zeros(grid: GridSpec, unit: Unit) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            unit,
        }
    }

    pub fn from_fn(grid: GridSpec, unit: Unit, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                values.push(f(ix, iy));
            }
        }
        Self { grid, values, unit }
    }

    pub fn from_values(grid: GridSpec, unit: Unit, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite field value at index {bad}")));
        }
        Ok(Self { grid, values, unit })
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.idx(ix, iy)]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut f64 {
        let i = self.grid.idx(ix, iy);
        &mut self.values[i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Field2D) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub(crate) fn check_same_shape(&self, other: &Field2D) -> Result<()> {
        if self.grid.nx != other.grid.nx || self.grid.ny != other.grid.ny {
            return Err(Error::Config(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.grid.nx, self.grid.ny, other.grid.nx, other.grid.ny
            )));
        }
        Ok(())
    }
}
