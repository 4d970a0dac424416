use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary charge, C.
pub const Q: f64 = 1.602_176_634e-19;
/// Boltzmann constant, eV/K.
pub const KB_EV: f64 = 8.617_333_262e-5;
/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.854_187_812_8e-12;

/// Table I sweep ranges.
pub const T_HZO_RANGE: (f64, f64) = (5.0, 9.0);
pub const TEMP_RANGE: (f64, f64) = (300.0, 473.0);
pub const TAU_RANGE: (f64, f64) = (0.0, 1e4);

/// The three swept device inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// HZO thickness in nm (see [`ThicknessMode`]).
    pub t_hzo: f64,
    /// Temperature in K.
    pub temp: f64,
    /// Retention time in s.
    pub tau: f64,
}

impl DeviceParams {
    pub fn new(t_hzo: f64, temp: f64, tau: f64) -> Self {
        Self { t_hzo, temp, tau }
    }

    /// True when any input lies outside the Table I ranges.
    pub fn is_extrapolated(&self) -> bool {
        let out = |v: f64, (lo, hi): (f64, f64)| v < lo || v > hi;
        out(self.t_hzo, T_HZO_RANGE) || out(self.temp, TEMP_RANGE) || out(self.tau, TAU_RANGE)
    }

    /// Rejects non-physical values; `allow_extrapolation` lifts the Table I
    /// range limits.
    pub fn validate(&self, allow_extrapolation: bool) -> Result<()> {
        if !(self.t_hzo > 0.0 && self.temp > 0.0 && self.tau >= 0.0)
            || !(self.t_hzo.is_finite() && self.temp.is_finite() && self.tau.is_finite())
        {
            return Err(Error::Config(format!("non-physical device parameters {self:?}")));
        }
        if !allow_extrapolation && self.is_extrapolated() {
            return Err(Error::Config(format!(
                "device parameters {self:?} outside the sweep ranges (extrapolation not enabled)"
            )));
        }
        Ok(())
    }
}

/// How `t_hzo` maps onto the two ferroelectric layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThicknessMode {
    /// Each HZO layer is `t_hzo` thick.
    #[default]
    PerLayer,
    /// The two layers share `t_hzo` equally.
    TotalSplit,
}

/// Material, kinetic and read-out constants of the retention simulator.
/// Defaults are illustrative, not calibrated device values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub eps_si: f64,
    pub eps_hzo: f64,
    pub eps_tdl: f64,
    /// Permittivity assigned to gate cells; they are held at 0 V, so this
    /// only shapes the face coupling at the gate interface.
    pub eps_gate: f64,
    pub t_tdl_nm: f64,
    pub t_channel_nm: f64,
    pub t_gate_nm: f64,
    pub thickness_mode: ThicknessMode,

    /// Remnant polarization magnitude, C/m².
    pub p_r0: f64,
    /// Initial trapped sheet charge as a fraction of `p_r0`.
    pub eta: f64,
    /// Lateral standard deviation of the trap profile, nm.
    pub trap_sigma_nm: f64,

    pub tau_trap0: f64,
    pub ea_trap_ev: f64,
    pub beta: f64,
    pub tau_pol0: f64,
    pub ea_pol_ev: f64,
    /// Field-acceleration scale of polarization relaxation, V/m.
    pub e0: f64,

    pub vth0: f64,
    pub ideality: f64,
    /// Coupling from channel-surface potential shift to threshold shift.
    pub kappa: f64,
    /// Drain current at `V_G = V_th`, A (fixes the current prefactor).
    pub i_at_vth: f64,
    pub vg_read: f64,
    /// Recorded for completeness; the compact model has no drain-bias term.
    pub vds_read: f64,
    pub vg_min: f64,
    pub vg_max: f64,
    pub vg_count: usize,
    /// Floor applied to log10 drain current.
    pub log10_i_floor: f64,

    /// Effective device width used to turn current into current density, nm.
    pub device_width_nm: f64,
    /// Current-density decay length below the channel surface, nm.
    pub j_depth_nm: f64,
    /// Decay length reached at the outer edge of the source/drain ends, nm.
    pub j_depth_sd_nm: f64,
    /// Floor applied to log10 current density.
    pub log10_j_floor: f64,

    pub substeps_per_decade: usize,
    pub fixed_point_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eps_si: 11.7,
            eps_hzo: 30.0,
            eps_tdl: 3.9,
            eps_gate: 1e4,
            t_tdl_nm: 2.0,
            t_channel_nm: 20.0,
            t_gate_nm: 5.0,
            thickness_mode: ThicknessMode::PerLayer,
            p_r0: 0.15,
            eta: 0.6,
            trap_sigma_nm: 25.0,
            tau_trap0: 1e-7,
            ea_trap_ev: 0.6,
            beta: 0.4,
            tau_pol0: 1e-5,
            ea_pol_ev: 0.7,
            e0: 5e8,
            vth0: 1.0,
            ideality: 1.5,
            kappa: 0.2,
            i_at_vth: 1e-7,
            vg_read: 2.0,
            vds_read: 0.05,
            vg_min: -2.0,
            vg_max: 4.0,
            vg_count: 61,
            log10_i_floor: -14.0,
            device_width_nm: 100.0,
            j_depth_nm: 3.0,
            j_depth_sd_nm: 10.0,
            log10_j_floor: -12.0,
            substeps_per_decade: 8,
            fixed_point_iters: 2,
            cg_tol: 1e-10,
            cg_max_iter: 20_000,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_si", self.eps_si),
            ("eps_hzo", self.eps_hzo),
            ("eps_tdl", self.eps_tdl),
            ("eps_gate", self.eps_gate),
            ("t_tdl_nm", self.t_tdl_nm),
            ("t_channel_nm", self.t_channel_nm),
            ("t_gate_nm", self.t_gate_nm),
            ("p_r0", self.p_r0),
            ("trap_sigma_nm", self.trap_sigma_nm),
            ("tau_trap0", self.tau_trap0),
            ("tau_pol0", self.tau_pol0),
            ("e0", self.e0),
            ("ideality", self.ideality),
            ("i_at_vth", self.i_at_vth),
            ("device_width_nm", self.device_width_nm),
            ("j_depth_nm", self.j_depth_nm),
            ("j_depth_sd_nm", self.j_depth_sd_nm),
            ("cg_tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) && self.eta != 0.0 {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.vg_count < 2 || !(self.vg_max > self.vg_min) {
            return Err(Error::Config("V_G grid needs at least 2 increasing points".into()));
        }
        if self.substeps_per_decade == 0 || self.fixed_point_iters == 0 || self.cg_max_iter == 0 {
            return Err(Error::Config("substeps, fixed-point iterations and CG iterations must be nonzero".into()));
        }
        Ok(())
    }

    pub fn vg_grid(&self) -> Vec<f64> {
        let step = (self.vg_max - self.vg_min) / (self.vg_count - 1) as f64;
        (0..self.vg_count).map(|i| self.vg_min + step * i as f64).collect()
    }

    /// Thermal voltage `k_B T / q`, V.
    pub fn thermal_voltage(temp: f64) -> f64 {
        KB_EV * temp
    }

    /// Characteristic detrapping time at `temp`, s.
    pub fn tau_trap(&self, temp: f64) -> f64 {
        self.tau_trap0 * (self.ea_trap_ev / (KB_EV * temp)).exp()
    }

    /// Characteristic polarization relaxation time at `temp`, s.
    pub fn tau_pol(&self, temp: f64) -> f64 {
        self.tau_pol0 * (self.ea_pol_ev / (KB_EV * temp)).exp()
    }

    /// Thickness of each HZO layer in nm for a given `t_hzo` input.
    pub fn layer_thickness(&self, t_hzo: f64) -> f64 {
        match self.thickness_mode {
            ThicknessMode::PerLayer => t_hzo,
            ThicknessMode::TotalSplit => 0.5 * t_hzo,
        }
    }
}
