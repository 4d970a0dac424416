use serde::{Deserialize, Serialize};

use super::config::OracleConfig;
use super::geometry::Geometry;
use crate::numerics::grid::{Field2D, Unit, NM};

/// Polarization and trapped-charge state of one device at retention time `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    /// Stack-normal polarization, C/m². Nonzero only in the HZO layers.
    pub p_y: Field2D,
    /// Trapped electron charge density magnitude, C/m³.
    pub n_t: Field2D,
    /// Trapped hole charge density, C/m³.
    pub p_t: Field2D,
    /// Retention time, s.
    pub tau: f64,
    pub(crate) n_t0: Field2D,
    pub(crate) p_t0: Field2D,
}

/// Scalar summaries tracked for monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Mean `|P_y|` over the ferroelectric cells, C/m².
    pub p_bar: f64,
    /// Mean electron sheet charge along the lower interface band, C/m².
    pub q_n: f64,
    /// Mean hole sheet charge along the upper interface band, C/m².
    pub q_p: f64,
}

impl Aggregates {
    /// Total trapped sheet charge magnitude (both species).
    pub fn q_bar(&self) -> f64 {
        self.q_n + self.q_p
    }
}

/// Lateral Gaussian trap profile with unit peak at the domain centre.
pub fn trap_profile(geometry: &Geometry, sigma_nm: f64) -> Vec<f64> {
    let g = &geometry.grid;
    let xc = 0.5 * g.width_nm();
    (0..g.nx)
        .map(|ix| {
            let d = g.x_center(ix) - xc;
            (-0.5 * d * d / (sigma_nm * sigma_nm)).exp()
        })
        .collect()
}

/// Post-erase state: uniform `+P_r0` in both HZO layers, screening electrons
/// on the lower HZO/TDL interface and holes on the upper one.
pub fn init_ers_state(geometry: &Geometry, config: &OracleConfig) -> OracleState {
    let g = geometry.grid;
    let profile = trap_profile(geometry, config.trap_sigma_nm);
    // Sheet charge spread over one row of height dy.
    let peak = config.eta * config.p_r0 / (g.dy * NM);
    let mut p_y = Field2D::zeros(g, Unit::CoulombPerM2);
    let mut n_t = Field2D::zeros(g, Unit::CoulombPerM3);
    let mut p_t = Field2D::zeros(g, Unit::CoulombPerM3);
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            let i = g.idx(ix, iy);
            if geometry.masks.fe[i] == 1 {
                p_y.values[i] = config.p_r0;
            }
            if geometry.masks.interface_n[i] == 1 {
                n_t.values[i] += peak * profile[ix];
            }
            if geometry.masks.interface_p[i] == 1 {
                p_t.values[i] += peak * profile[ix];
            }
        }
    }
    OracleState {
        n_t0: n_t.clone(),
        p_t0: p_t.clone(),
        p_y,
        n_t,
        p_t,
        tau: 0.0,
    }
}

/// Zero polarization and zero traps on the same grid.
pub fn reference_state(geometry: &Geometry) -> OracleState {
    let g = geometry.grid;
    let p_y = Field2D::zeros(g, Unit::CoulombPerM2);
    let n_t = Field2D::zeros(g, Unit::CoulombPerM3);
    OracleState {
        n_t0: n_t.clone(),
        p_t0: n_t.clone(),
        p_t: n_t.clone(),
        p_y,
        n_t,
        tau: 0.0,
    }
}

impl OracleState {
    /// Net volumetric charge `p_t - n_t`, C/m³.
    pub fn rho(&self) -> Field2D {
        let mut rho = self.p_t.clone();
        for (r, n) in rho.values.iter_mut().zip(&self.n_t.values) {
            *r -= n;
        }
        rho
    }

    pub fn aggregates(&self, geometry: &Geometry) -> Aggregates {
        compute_aggregates(&self.p_y.values, &self.n_t.values, &self.p_t.values, geometry)
    }
}

/// Aggregates from raw planes; shared by the simulator and the surrogate
/// metrics so both sides use one definition.
pub fn compute_aggregates(p_y: &[f64], n_t: &[f64], p_t: &[f64], geometry: &Geometry) -> Aggregates {
    let g = &geometry.grid;
    let m = &geometry.masks;
    let mut p_sum = 0.0;
    let mut fe_cells = 0usize;
    let (mut qn, mut qp) = (0.0, 0.0);
    for i in 0..g.len() {
        if m.fe[i] == 1 {
            p_sum += p_y[i].abs();
            fe_cells += 1;
        }
        if m.interface_n[i] == 1 {
            qn += n_t[i].abs();
        }
        if m.interface_p[i] == 1 {
            qp += p_t[i].abs();
        }
    }
    let sheet = g.dy * NM / g.nx as f64;
    Aggregates {
        p_bar: if fe_cells > 0 { p_sum / fe_cells as f64 } else { 0.0 },
        q_n: qn * sheet,
        q_p: qp * sheet,
    }
}
