use serde::{Deserialize, Serialize};

use super::config::OracleConfig;
use super::geometry::Geometry;
use crate::error::{Error, Result};
use crate::numerics::grid::{Field2D, Unit, NM};

/// Transfer curve at a fixed state: drain current stored as log10(A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvCurve {
    pub v_g: Vec<f64>,
    pub log10_id: Vec<f64>,
}

/// Prefactor `I0` such that `I_D(V_th) = i_at_vth`.
pub fn current_prefactor(config: &OracleConfig) -> f64 {
    config.i_at_vth / std::f64::consts::LN_2.powi(2)
}

/// Compact-model drain current, A.
pub fn drain_current(v_g: f64, vth: f64, temp: f64, config: &OracleConfig) -> f64 {
    let phi_t = OracleConfig::thermal_voltage(temp);
    let x = (v_g - vth) / (2.0 * config.ideality * phi_t);
    // ln(1 + e^x) without overflow for large x.
    let softplus = if x > 30.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    current_prefactor(config) * softplus * softplus
}

/// `V_th = V_th0 - kappa * (phi_s - phi_s_ref)`.
pub fn internal_vth(phi_s: f64, phi_s_ref: f64, config: &OracleConfig) -> f64 {
    config.vth0 - config.kappa * (phi_s - phi_s_ref)
}

pub fn compute_iv(vth: f64, temp: f64, config: &OracleConfig) -> IvCurve {
    let v_g = config.vg_grid();
    let log10_id = v_g
        .iter()
        .map(|&v| drain_current(v, vth, temp, config).log10().max(config.log10_i_floor))
        .collect();
    IvCurve { v_g, log10_id }
}

/// Constant-current threshold: gate voltage where the curve crosses
/// `i_crit`, by linear interpolation in (V_G, log10 I_D). Samples sitting on
/// the floor are not used as crossing points.
pub fn extract_vth(iv: &IvCurve, i_crit: f64, log10_floor: f64) -> Result<f64> {
    if iv.v_g.len() != iv.log10_id.len() || iv.v_g.len() < 2 {
        return Err(Error::Extraction("curve needs at least two matching samples".into()));
    }
    let target = i_crit.log10();
    let y = &iv.log10_id;
    let x = &iv.v_g;
    for i in 0..y.len() {
        if y[i] == target && y[i] > log10_floor {
            return Ok(x[i]);
        }
    }
    for i in 0..y.len() - 1 {
        let (a, b) = (y[i], y[i + 1]);
        if a <= log10_floor && b <= log10_floor {
            continue;
        }
        if (a < target && b > target) || (a > target && b < target) {
            if a <= log10_floor || b <= log10_floor {
                return Err(Error::Extraction(format!(
                    "crossing at {} V involves a floored sample",
                    x[i]
                )));
            }
            return Ok(x[i] + (target - a) * (x[i + 1] - x[i]) / (b - a));
        }
    }
    let above = y.iter().all(|&v| v > target);
    Err(Error::Extraction(format!(
        "curve never crosses {i_crit:e} A (entirely {})",
        if above { "above" } else { "below" }
    )))
}

/// Spatial current-density map in log10(A/m²).
///
/// Current density is `I_D(V_G_read) / (W * lambda(x)) * exp(-depth / lambda(x))`
/// below the channel surface, where `lambda` is `j_depth_nm` between the
/// source/drain ends and grows linearly to `j_depth_sd_nm` at the outer
/// edges. Cells above the channel surface sit at the floor.
pub fn compute_current_map(vth: f64, temp: f64, geometry: &Geometry, config: &OracleConfig) -> Field2D {
    let g = &geometry.grid;
    let i_read = drain_current(config.vg_read, vth, temp, config);
    let width = config.device_width_nm * NM;
    let surface_top = (geometry.rows.surface_row() + 1) as f64 * g.dy;
    let (sd_lo, sd_hi) = (g.sd_extent, g.width_nm() - g.sd_extent);
    Field2D::from_fn(*g, Unit::Log10AmperePerM2, |ix, iy| {
        if iy > geometry.rows.surface_row() {
            return config.log10_j_floor;
        }
        let x = g.x_center(ix);
        let into_sd = if x < sd_lo {
            (sd_lo - x) / sd_lo
        } else if x > sd_hi {
            (x - sd_hi) / (g.width_nm() - sd_hi)
        } else {
            0.0
        };
        let lambda = (config.j_depth_nm + into_sd * (config.j_depth_sd_nm - config.j_depth_nm)) * NM;
        let depth = (surface_top - (iy as f64 + 0.5) * g.dy) * NM;
        let j = i_read / (width * lambda) * (-depth / lambda).exp();
        j.log10().max(config.log10_j_floor)
    })
}
