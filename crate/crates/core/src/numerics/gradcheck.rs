//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::tensor::ParamStore;
use crate::error::{Error, Result};

/// Maximum relative error observed for one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub median_rel_err: f64,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    /// Median over every checked coordinate of every tensor.
    pub fn median_rel_err(&self) -> f64 {
        let mut all: Vec<f64> = self.tensors.iter().flat_map(|t| t.errors.iter().copied()).collect();
        median(&mut all)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss` against central differences on up
/// to `per_tensor` randomly chosen coordinates of every parameter tensor.
/// Perturbations are `step * max(1, |theta|)`.
pub fn grad_check<F>(
    loss: F,
    params: &ParamStore<f64>,
    step: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let out = loss(&mut g)?;
        Ok(g.scalar(out))
    };
    let grads = {
        let mut g = Graph::new(params);
        let out = loss(&mut g)?;
        g.backward(out)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut tensors = Vec::new();
    for name in params.names() {
        let len = params.get(&name)?.len();
        let zeros;
        let analytic = match grads.get(&name) {
            Some(t) => t,
            None => {
                zeros = super::tensor::Tensor::zeros(&params.get(&name)?.shape);
                &zeros
            }
        };
        let count = per_tensor.min(len);
        let mut errors = Vec::with_capacity(count);
        for i in sample(&mut rng, len, count) {
            let theta = params.get(&name)?.data[i];
            let h = step * theta.abs().max(1.0);
            work.get_mut(&name)?.data[i] = theta + h;
            let up = eval(&work)?;
            work.get_mut(&name)?.data[i] = theta - h;
            let down = eval(&work)?;
            work.get_mut(&name)?.data[i] = theta;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::Usage(format!("non-finite loss while perturbing {name}[{i}]")));
            }
            errors.push(rel_err(analytic.data[i], numeric));
        }
        let max_rel_err = errors.iter().copied().fold(0.0, f64::max);
        tensors.push(TensorCheck {
            name,
            checked: count,
            max_rel_err,
            median_rel_err: median(&mut errors.clone()),
            errors,
        });
    }
    Ok(GradCheckReport { step, tensors })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::fd::FluxStencil;
    use crate::numerics::fft::SpectralPlan;
    use crate::numerics::grid::GridSpec;
    use crate::numerics::tensor::{ParamKind, Tensor};

    const TOL: f64 = 1e-6;

    fn store(entries: &[(&str, &[usize], ParamKind)], seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape, kind) in entries {
            s.insert(*name, Tensor::uniform(shape, -1.0, 1.0, &mut rng), *kind);
        }
        s
    }

    fn check(s: &ParamStore<f64>, f: impl Fn(&mut Graph<'_, f64>) -> Result<Var>) {
        let report = grad_check(f, s, 1e-6, 40, 3).unwrap();
        for t in &report.tensors {
            assert!(t.max_rel_err < TOL, "{}: {}", t.name, t.max_rel_err);
        }
    }

    /// Weighted sum with fixed pseudo-random weights so every output entry
    /// contributes a distinct cotangent.
    fn probe(g: &mut Graph<'_, f64>, v: Var) -> Var {
        let n = g.value(v).len();
        let w: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let w = g.mul_const(v, Arc::new(w));
        g.sum_all(w)
    }

    #[test]
    fn elementwise_ops() {
        let s = store(&[("a", &[2, 3, 4], ParamKind::Real), ("b", &[2, 3, 4], ParamKind::Real)], 1);
        check(&s, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let x = g.mul(a, b);
            let y = g.sub(x, a);
            let y = g.add(y, b);
            let y = g.gelu(y);
            let z = g.tanh(a);
            let z = g.square(z);
            let y = g.add(y, z);
            let y = g.scale(y, 1.7);
            let q = g.abs(b);
            let y = g.add(y, q);
            let r = g.relu(a);
            let y = g.add(y, r);
            let c = g.clamp_min(b, -0.3);
            let y = g.mul(y, c);
            let y = g.reshape(y, &[6, 4]);
            Ok(probe(g, y))
        });
    }

    #[test]
    fn channel_ops() {
        let s = store(
            &[
                ("w", &[5, 3], ParamKind::Real),
                ("x", &[2, 3, 4, 2], ParamKind::Real),
                ("bias", &[5], ParamKind::Real),
                ("s", &[5], ParamKind::Real),
            ],
            2,
        );
        check(&s, |g| {
            let w = g.param("w")?;
            let x = g.param("x")?;
            let b = g.param("bias")?;
            let sc = g.param("s")?;
            let y = g.channel_mix(w, x);
            let y = g.add_channel(y, b);
            let y = g.scale_channel(y, sc);
            let y = g.channel_affine(y, &[1.0, -2.0, 0.5, 3.0, 1.5], &[0.1, 0.0, -1.0, 2.0, 0.3]);
            let p = g.global_avg_pool(y);
            let sp = g.sum_spatial(y);
            let c = g.select_channel(y, 3);
            let a = probe(g, p);
            let b2 = probe(g, sp);
            let c2 = probe(g, c);
            let t = g.add(a, b2);
            Ok(g.add(t, c2))
        });
    }

    #[test]
    fn spectral_conv_and_transforms() {
        let plan = Arc::new(SpectralPlan::<f64>::new(8, 8, 3, 3).unwrap());
        let s = store(
            &[
                ("w", &[2, 3, 6, 3, 2], ParamKind::Complex),
                ("x", &[2, 2, 8, 8], ParamKind::Real),
                ("h", &[2, 6, 3, 2], ParamKind::Real),
            ],
            4,
        );
        check(&s, |g| {
            let w = g.param("w")?;
            let x = g.param("x")?;
            let h = g.param("h")?;
            let y = g.spectral_conv(x, w, plan.clone());
            let f = g.rfft2(x, plan.clone());
            let r = g.irfft2(h, plan.clone());
            let a = probe(g, y);
            let b = probe(g, f);
            let c = probe(g, r);
            let t = g.add(a, b);
            Ok(g.add(t, c))
        });
    }

    #[test]
    fn conv2d_strided() {
        let s = store(&[("w", &[4, 3, 3, 3], ParamKind::Real), ("x", &[2, 3, 7, 6], ParamKind::Real)], 5);
        check(&s, |g| {
            let w = g.param("w")?;
            let x = g.param("x")?;
            let y = g.conv2d(x, w, 2, 1);
            assert_eq!(g.shape(y), &[2, 4, 4, 3]);
            Ok(probe(g, y))
        });
    }

    #[test]
    fn stencil_ops_and_pairs() {
        let grid = GridSpec::square(8);
        let eps: Vec<f64> = (0..grid.len()).map(|i| 1.0 + (i % 5) as f64).collect();
        let st = Arc::new(FluxStencil::<f64>::new(&grid, &eps));
        let s = store(&[("x", &[3, 1, 8, 8], ParamKind::Real)], 6);
        check(&s, |g| {
            let x = g.param("x")?;
            let d = g.div_eps_grad(x, vec![st.clone(), st.clone(), st.clone()]);
            let d = g.scale(d, 1e-18);
            let e = g.ddy(x, 1e-9);
            let e = g.scale(e, 1e-9);
            let p = g.pair_diff(x, vec![(0, 1), (2, 0), (1, 2)]);
            let a = probe(g, d);
            let b = probe(g, e);
            let c = g.relu(p);
            let c = probe(g, c);
            let t = g.add(a, b);
            Ok(g.add(t, c))
        });
    }

    #[test]
    fn mean_all_and_shared_params() {
        let s = store(&[("a", &[3, 2], ParamKind::Real)], 7);
        check(&s, |g| {
            let a = g.param("a")?;
            let a2 = g.param("a")?;
            let y = g.mul(a, a2);
            Ok(g.mean_all(y))
        });
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let s = store(&[("a", &[3, 2], ParamKind::Real)], 8);
        let mut g = Graph::new(&s);
        let a = g.param("a").unwrap();
        assert!(matches!(g.backward(a), Err(Error::Usage(_))));
        let empty = Graph::new(&s);
        assert!(empty.backward(a).is_err());
    }

    #[test]
    fn unknown_param_is_usage_error() {
        let s = store(&[("a", &[1], ParamKind::Real)], 9);
        let mut g = Graph::new(&s);
        assert!(matches!(g.param("nope"), Err(Error::Usage(_))));
    }
}
