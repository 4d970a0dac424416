//! Adam with decoupled weight decay and optional global-norm clipping.

use std::collections::BTreeMap;

use super::config::OptimConfig;
use crate::numerics::graph::Gradients;
use crate::numerics::real::Real;
use crate::numerics::tensor::ParamStore;

/// Optimizer state over double-precision master weights.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<f64>, grads: &Gradients<T>, lr: f64, cfg: &OptimConfig) {
        self.t += 1;
        let clip = if cfg.clip_norm > 0.0 {
            let norm: f64 = grads
                .by_name
                .values()
                .flat_map(|t| t.data.iter())
                .map(|v| v.f64() * v.f64())
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                cfg.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let n = p.tensor.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                let gi = g.data[i].f64() * clip;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = &mut p.tensor.data[i];
                *w -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::tensor::{ParamKind, Tensor};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[2], vec![1.0, -2.0]), ParamKind::Real);
        let grads = {
            let mut g = Graph::new(&s);
            let w = g.param("w").unwrap();
            let sq = g.square(w);
            let out = g.sum_all(sq);
            g.backward(out).unwrap()
        };
        let mut adam = Adam::new();
        let cfg = OptimConfig::default();
        adam.step(&mut s, &grads, 0.1, &cfg);
        let w = &s.get("w").unwrap().data;
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] + 1.9).abs() < 1e-7, "{w:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[3], vec![3.0, -1.0, 0.5]), ParamKind::Real);
        let mut adam = Adam::new();
        let cfg = OptimConfig {
            clip_norm: 1.0,
            ..OptimConfig::default()
        };
        for k in 0..2000 {
            let grads = {
                let mut g = Graph::new(&s);
                let w = g.param("w").unwrap();
                let sq = g.square(w);
                let out = g.sum_all(sq);
                g.backward(out).unwrap()
            };
            adam.step(&mut s, &grads, cfg.lr_at(k, 2000) * 10.0, &cfg);
        }
        assert!(s.get("w").unwrap().data.iter().all(|v| v.abs() < 1e-2));
    }
}
