//! Data, Poisson-residual and monotonicity losses on recorded graphs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, J_CHANNEL};
use crate::error::{Error, Result};
use crate::numerics::fd::FluxStencil;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;
use crate::numerics::NM;
use crate::oracle::poisson::stack_interior;
use crate::oracle::{Aggregates, Geometry, Masks};

/// Per-device constants the physics losses need.
#[derive(Debug)]
pub struct SampleGeometry<T: Real> {
    pub stencil: Arc<FluxStencil<T>>,
    pub interior: Vec<bool>,
    pub masks: Masks,
    pub nx: usize,
    pub dy_m: f64,
}

impl<T: Real> SampleGeometry<T> {
    pub fn new(geometry: &Geometry) -> Self {
        Self {
            stencil: Arc::new(FluxStencil::new(&geometry.grid, &geometry.eps.values)),
            interior: stack_interior(geometry),
            masks: geometry.masks.clone(),
            nx: geometry.grid.nx,
            dy_m: geometry.grid.dy * NM,
        }
    }
}

/// Reference magnitudes that make the physics terms O(1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsScales {
    /// RMS of `rho - dP_y/dy` over stack interiors of the seen split, C/m³.
    pub r_scale: f64,
    /// Largest seen mean |P_y|, C/m².
    pub p_ref: f64,
    /// Largest seen total trapped sheet charge, C/m².
    pub q_ref: f64,
}

impl PhysicsScales {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("r_scale", self.r_scale), ("p_ref", self.p_ref), ("q_ref", self.q_ref)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("physics scale {n} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean squared error per channel over its mask (stack for the first four,
/// whole domain for current density), averaged over channels.
pub fn loss_data<T: Real>(g: &mut Graph<'_, T>, pred: Var, truth: Var, masks: &[&Masks]) -> Var {
    let shape = g.shape(pred).to_vec();
    let (b, c, n) = (shape[0], shape[1], shape[2] * shape[3]);
    assert_eq!(b, masks.len());
    let stack_cells: usize = masks.iter().map(|m| m.stack.iter().map(|&v| v as usize).sum::<usize>()).sum();
    let stack_w = 1.0 / (c as f64 * stack_cells.max(1) as f64);
    let full_w = 1.0 / (c as f64 * (b * n) as f64);
    let mut w = Vec::with_capacity(b * c * n);
    for m in masks {
        for ch in 0..c {
            if ch == J_CHANNEL {
                w.extend(std::iter::repeat_n(T::of(full_w), n));
            } else {
                w.extend(m.stack.iter().map(|&v| T::of(v as f64 * stack_w)));
            }
        }
    }
    let d = g.sub(pred, truth);
    let d2 = g.square(d);
    let wd = g.mul_const(d2, Arc::new(w));
    g.sum_all(wd)
}

fn denormalize<T: Real>(g: &mut Graph<'_, T>, pred: Var, stats: &NormStats) -> Var {
    let scale: Vec<f64> = stats.channels.iter().map(|s| s.std).collect();
    let shift: Vec<f64> = stats.channels.iter().map(|s| s.mean).collect();
    g.channel_affine(pred, &scale, &shift)
}

/// Mean of `(r / r_scale)^2` over stack interiors, where
/// `r = div(eps grad phi) + (p_t - n_t) - dP_y/dy` on denormalized maps.
pub fn loss_poisson<T: Real>(
    g: &mut Graph<'_, T>,
    pred: Var,
    stats: &NormStats,
    geoms: &[Arc<SampleGeometry<T>>],
    r_scale: f64,
) -> Var {
    let phys = denormalize(g, pred, stats);
    let phi = g.select_channel(phys, 0);
    let p_y = g.select_channel(phys, 1);
    let n_t = g.select_channel(phys, 2);
    let p_t = g.select_channel(phys, 3);
    let lap = g.div_eps_grad(phi, geoms.iter().map(|s| s.stencil.clone()).collect());
    let div_p = g.ddy(p_y, geoms[0].dy_m);
    let rho = g.sub(p_t, n_t);
    let src = g.sub(rho, div_p);
    let r = g.add(lap, src);
    let r = g.scale(r, 1.0 / r_scale);
    let r2 = g.square(r);
    let cells: usize = geoms.iter().map(|s| s.interior.iter().filter(|&&v| v).count()).sum();
    let inv = 1.0 / cells.max(1) as f64;
    let w: Vec<T> = geoms
        .iter()
        .flat_map(|s| s.interior.iter().map(move |&v| T::of(if v { inv } else { 0.0 })))
        .collect();
    let wr = g.mul_const(r2, Arc::new(w));
    g.sum_all(wr)
}

/// Scaled `(P̄, Q̄)` per sample as `[b, 1]` variables, matching
/// [`crate::oracle::compute_aggregates`] divided by the reference scales.
pub fn aggregates_graph<T: Real>(
    g: &mut Graph<'_, T>,
    pred: Var,
    stats: &NormStats,
    geoms: &[Arc<SampleGeometry<T>>],
    scales: &PhysicsScales,
) -> (Var, Var) {
    let phys = denormalize(g, pred, stats);
    let a = g.abs(phys);
    let mut w = Vec::new();
    for s in geoms {
        let n = s.masks.stack.len();
        let fe_cells = s.masks.fe.iter().filter(|&&v| v == 1).count().max(1) as f64;
        let sheet = s.dy_m / s.nx as f64;
        w.extend(std::iter::repeat_n(T::zero(), n));
        w.extend(s.masks.fe.iter().map(|&v| T::of(v as f64 / fe_cells / scales.p_ref)));
        w.extend(s.masks.interface_n.iter().map(|&v| T::of(v as f64 * sheet / scales.q_ref)));
        w.extend(s.masks.interface_p.iter().map(|&v| T::of(v as f64 * sheet / scales.q_ref)));
        w.extend(std::iter::repeat_n(T::zero(), n));
    }
    let wa = g.mul_const(a, Arc::new(w));
    let sums = g.sum_spatial(wa);
    let p = g.select_channel(sums, 1);
    let qn = g.select_channel(sums, 2);
    let qp = g.select_channel(sums, 3);
    let q = g.add(qn, qp);
    (p, q)
}

/// Consecutive pairs within each group and their embedded-time spacing.
/// Groups must be strictly increasing in `s`.
pub fn mono_pairs(groups: &[std::ops::Range<usize>], s_tau: &[f64]) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
    let mut pairs = Vec::new();
    let mut ds = Vec::new();
    for r in groups {
        for i in r.start..r.end.saturating_sub(1) {
            let d = s_tau[i + 1] - s_tau[i];
            if !(d > 0.0) {
                return Err(Error::Usage(format!(
                    "monotonicity loss needs strictly increasing retention times (s = {} then {})",
                    s_tau[i],
                    s_tau[i + 1]
                )));
            }
            pairs.push((i, i + 1));
            ds.push(d);
        }
    }
    Ok((pairs, ds))
}

/// `sum_i relu(dP_i / ds_i) + relu(dQ_i / ds_i)` over consecutive pairs,
/// averaged over the pair count. `None` when there are no pairs.
pub fn loss_mono<T: Real>(
    g: &mut Graph<'_, T>,
    p: Var,
    q: Var,
    pairs: Vec<(usize, usize)>,
    ds: &[f64],
) -> Option<Var> {
    if pairs.is_empty() {
        return None;
    }
    let inv: Arc<Vec<T>> = Arc::new(ds.iter().map(|d| T::of(1.0 / d)).collect());
    let count = pairs.len() as f64;
    let mut total = None;
    for x in [p, q] {
        let d = g.pair_diff(x, pairs.clone());
        let slope = g.mul_const(d, inv.clone());
        let r = g.relu(slope);
        let s = g.sum_all(r);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s),
        });
    }
    Some(g.scale(total.unwrap(), 1.0 / count))
}

/// Scalar form of [`loss_mono`] on plain sequences (one trajectory).
pub fn mono_penalty(p: &[f64], q: &[f64], s_tau: &[f64]) -> f64 {
    let n = p.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let ds = s_tau[i + 1] - s_tau[i];
        total += ((p[i + 1] - p[i]) / ds).max(0.0) + ((q[i + 1] - q[i]) / ds).max(0.0);
    }
    total / n as f64
}

/// Counts consecutive pairs whose `P̄` or `Q̄` rises by more than
/// `rel_tol` times the reference scale. Each pair counts once per quantity.
pub fn count_mono_violations(aggs: &[Aggregates], scales: &PhysicsScales, rel_tol: f64) -> usize {
    aggs.windows(2)
        .map(|w| {
            ((w[1].p_bar - w[0].p_bar) > rel_tol * scales.p_ref) as usize
                + ((w[1].q_bar() - w[0].q_bar()) > rel_tol * scales.q_ref) as usize
        })
        .sum()
}

/// Input tensor helper: stacks flat per-sample planes into `[b, c, nx, ny]`.
pub fn batch_tensor<T: Real>(planes: &[&[f64]], c: usize, nx: usize, ny: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(planes.len() * c * nx * ny);
    for p in planes {
        assert_eq!(p.len(), c * nx * ny);
        data.extend(p.iter().map(|&v| T::of(v)));
    }
    Tensor::from_vec(&[planes.len(), c, nx, ny], data)
}
