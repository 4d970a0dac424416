use serde::{Deserialize, Serialize};

use super::config::OracleConfig;
use super::geometry::{build_geometry, Geometry, Masks};
use super::iv::{compute_current_map, compute_iv, extract_vth, internal_vth, IvCurve};
use super::poisson::{relative_residual, solve_poisson, stack_interior, surface_potential};
use super::retention::step_retention;
use super::state::{init_ers_state, reference_state, Aggregates, OracleState};
use crate::error::{Error, Result};
use crate::numerics::grid::{Field2D, GridSpec};

/// Retention times of one Table I trajectory, s.
pub const TABLE_TAUS: [f64; 6] = [0.0, 1.0, 1e1, 1e2, 1e3, 1e4];

/// Names of the five map channels, in storage order.
pub const CHANNEL_NAMES: [&str; 5] = ["phi", "p_y", "n_t", "p_t", "log10_j"];

/// The five co-registered maps of one device state plus region masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBundle {
    /// Potential restricted to the stack, V.
    pub phi: Field2D,
    pub p_y: Field2D,
    pub n_t: Field2D,
    pub p_t: Field2D,
    /// log10 current density over the full domain.
    pub log10_j: Field2D,
    pub masks: Masks,
}

impl FieldBundle {
    pub fn grid(&self) -> GridSpec {
        self.phi.grid
    }

    pub fn channels(&self) -> [&Field2D; 5] {
        [&self.phi, &self.p_y, &self.n_t, &self.p_t, &self.log10_j]
    }

    pub fn from_channels(mut channels: Vec<Field2D>, masks: Masks) -> Result<Self> {
        if channels.len() != 5 {
            return Err(Error::Format(format!("expected 5 channels, got {}", channels.len())));
        }
        let log10_j = channels.pop().unwrap();
        let p_t = channels.pop().unwrap();
        let n_t = channels.pop().unwrap();
        let p_y = channels.pop().unwrap();
        let phi = channels.pop().unwrap();
        Ok(Self {
            phi,
            p_y,
            n_t,
            p_t,
            log10_j,
            masks,
        })
    }

    /// Relative residual of the discrete Poisson equation over the stack
    /// interior, recomputed from the stored maps.
    pub fn poisson_residual(&self, geometry: &Geometry) -> f64 {
        relative_residual(
            &self.phi.values,
            &self.p_y.values,
            &self.n_t.values,
            &self.p_t.values,
            geometry,
            &stack_interior(geometry),
        )
    }
}

/// One retention time of a trajectory.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub tau: f64,
    pub bundle: FieldBundle,
    pub iv: IvCurve,
    /// Threshold from the compact model, V.
    pub vth_internal: f64,
    /// Constant-current threshold extracted from `iv`, V.
    pub vth: f64,
    /// Lateral mean potential on the channel surface, V.
    pub phi_s: f64,
    pub aggregates: Aggregates,
    /// Poisson residual recomputed from the bundle.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t_hzo: f64,
    pub temp: f64,
    pub snapshots: Vec<Snapshot>,
}

/// Serializable per-snapshot summary used in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub tau: f64,
    pub vth: f64,
    pub aggregates: Aggregates,
}

fn snapshot(
    state: &OracleState,
    temp: f64,
    geometry: &Geometry,
    config: &OracleConfig,
    phi_s_ref: f64,
) -> Result<Snapshot> {
    let sol = solve_poisson(state, geometry, config)?;
    let phi_s = surface_potential(&sol.phi, geometry);
    let vth_internal = internal_vth(phi_s, phi_s_ref, config);
    let iv = compute_iv(vth_internal, temp, config);
    let vth = extract_vth(&iv, config.i_at_vth, config.log10_i_floor)?;
    let mut phi = sol.phi;
    for (v, &m) in phi.values.iter_mut().zip(&geometry.masks.stack) {
        if m == 0 {
            *v = 0.0;
        }
    }
    let bundle = FieldBundle {
        phi,
        p_y: state.p_y.clone(),
        n_t: state.n_t.clone(),
        p_t: state.p_t.clone(),
        log10_j: compute_current_map(vth_internal, temp, geometry, config),
        masks: geometry.masks.clone(),
    };
    let residual = bundle.poisson_residual(geometry);
    Ok(Snapshot {
        tau: state.tau,
        aggregates: state.aggregates(geometry),
        bundle,
        iv,
        vth_internal,
        vth,
        phi_s,
        residual,
    })
}

/// Simulates one (t_hzo, temp) device from the erased state through the
/// requested retention times (ascending, starting anywhere `>= 0`).
pub fn simulate(t_hzo: f64, temp: f64, grid: &GridSpec, config: &OracleConfig, taus: &[f64]) -> Result<Trajectory> {
    config.validate()?;
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage(format!("retention times must be ascending and non-negative: {taus:?}")));
    }
    if !(temp > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temp}")));
    }
    let geometry = build_geometry(t_hzo, config, grid)?;
    let reference = solve_poisson(&reference_state(&geometry), &geometry, config)?;
    let phi_s_ref = surface_potential(&reference.phi, &geometry);

    let mut state = init_ers_state(&geometry, config);
    let mut snapshots = Vec::with_capacity(taus.len());
    for &tau in taus {
        state = step_retention(&state, tau, temp, &geometry, config)?;
        snapshots.push(snapshot(&state, temp, &geometry, config, phi_s_ref)?);
    }
    Ok(Trajectory {
        t_hzo,
        temp,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_snapshot_is_the_erased_state() {
        let g = GridSpec::square(32);
        let c = OracleConfig::default();
        let traj = simulate(7.0, 300.0, &g, &c, &[0.0, 1.0]).unwrap();
        let geo = build_geometry(7.0, &c, &g).unwrap();
        let init = init_ers_state(&geo, &c);
        let s0 = &traj.snapshots[0];
        assert_eq!(s0.tau, 0.0);
        assert_eq!(s0.bundle.p_y, init.p_y);
        assert_eq!(s0.bundle.n_t, init.n_t);
        let sol = solve_poisson(&init, &geo, &c).unwrap();
        for i in 0..g.len() {
            let expect = if geo.masks.stack[i] == 1 { sol.phi.values[i] } else { 0.0 };
            assert_eq!(s0.bundle.phi.values[i], expect);
        }
    }

    #[test]
    fn masked_channels_vanish_outside_stack() {
        let g = GridSpec::square(32);
        let c = OracleConfig::default();
        let traj = simulate(6.0, 400.0, &g, &c, &[0.0, 10.0]).unwrap();
        for s in &traj.snapshots {
            let b = &s.bundle;
            for i in 0..g.len() {
                if b.masks.stack[i] == 0 {
                    for ch in &b.channels()[..4] {
                        assert_eq!(ch.values[i], 0.0);
                    }
                }
            }
            assert!(s.residual <= 10.0 * c.cg_tol, "{}", s.residual);
        }
    }

    #[test]
    fn rejects_unordered_times() {
        let g = GridSpec::square(32);
        let c = OracleConfig::default();
        assert!(simulate(7.0, 300.0, &g, &c, &[10.0, 1.0]).is_err());
        assert!(simulate(7.0, 300.0, &g, &c, &[]).is_err());
    }

    #[test]
    fn erased_threshold_sits_inside_the_sweep() {
        let g = GridSpec::square(64);
        let c = OracleConfig::default();
        for t in [5.0, 9.0] {
            let traj = simulate(t, 300.0, &g, &c, &[0.0]).unwrap();
            let v = traj.snapshots[0].vth;
            assert!(v > c.vth0 && v < c.vg_max - 0.5, "t_hzo={t}: V_th={v}");
        }
    }
}
