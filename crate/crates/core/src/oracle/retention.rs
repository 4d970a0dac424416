use super::config::OracleConfig;
use super::geometry::Geometry;
use super::poisson::{solve_poisson, vertical_field};
use super::state::OracleState;
use crate::error::{Error, Result};

/// Start of the logarithmic substep grid; `[0, FIRST_STEP]` is one step.
pub const FIRST_STEP: f64 = 0.1;

/// Substep boundaries strictly inside `(from, to)` plus both endpoints.
///
/// The global grid is `{0} U {0.1 * 10^(k / per_decade)}`, so intervals
/// sharing endpoints always use the same boundaries.
pub fn substep_times(from: f64, to: f64, per_decade: usize) -> Vec<f64> {
    let mut out = vec![from];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut k = 0usize;
    loop {
        let t = if k % per_decade == 0 {
            // Whole decades land exactly on the snapshot times.
            FIRST_STEP * 10f64.powi((k / per_decade) as i32)
        } else {
            FIRST_STEP * 10f64.powf(k as f64 / per_decade as f64)
        };
        if t >= to || close(t, to) {
            break;
        }
        if t > from && !close(t, from) {
            out.push(t);
        }
        k += 1;
    }
    if to > from {
        out.push(to);
    }
    out
}

/// Advances the state from `state.tau` to `tau_to` at temperature `temp`.
///
/// Traps follow the stretched-exponential closed form evaluated at absolute
/// time. Polarization relaxes per cell with rate
/// `exp(|E_y| / E_0) / tau_p`, where `E_y` comes from a Poisson solve that is
/// iterated `fixed_point_iters` times per substep.
pub fn step_retention(
    state: &OracleState,
    tau_to: f64,
    temp: f64,
    geometry: &Geometry,
    config: &OracleConfig,
) -> Result<OracleState> {
    let tau_from = state.tau;
    if !(tau_to >= tau_from) {
        return Err(Error::Usage(format!(
            "retention step must move forward in time ({tau_from} s -> {tau_to} s)"
        )));
    }
    let mut s = state.clone();
    if tau_to == tau_from {
        return Ok(s);
    }
    let tau_d = config.tau_trap(temp);
    let tau_p = config.tau_pol(temp);
    let times = substep_times(tau_from, tau_to, config.substeps_per_decade);
    let fe = &geometry.masks.fe;
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let keep = (-(t1 / tau_d).powf(config.beta)).exp();
        for (v, v0) in s.n_t.values.iter_mut().zip(&s.n_t0.values) {
            *v = v0 * keep;
        }
        for (v, v0) in s.p_t.values.iter_mut().zip(&s.p_t0.values) {
            *v = v0 * keep;
        }
        let p_start = s.p_y.values.clone();
        let dt = t1 - t0;
        for _ in 0..config.fixed_point_iters {
            let sol = solve_poisson(&s, geometry, config)?;
            let e = vertical_field(&sol.phi);
            for i in 0..p_start.len() {
                if fe[i] == 1 {
                    let rate = (e[i].abs() / config.e0).exp() / tau_p;
                    s.p_y.values[i] = p_start[i] * (-dt * rate).exp();
                }
            }
        }
        s.tau = t1;
    }
    s.tau = tau_to;
    Ok(s)
}
