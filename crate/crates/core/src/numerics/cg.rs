//! Conjugate-gradient solver for symmetric positive-definite operators.

use super::grid::Field2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Field2D,
    pub iterations: usize,
    /// Final true relative residual `|b - A x| / |b|`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from `x = 0`.
///
/// The returned solution always satisfies `|b - A x| / |b| <= tol`, checked
/// against a freshly computed residual; otherwise [`Error::Solver`] is
/// returned carrying the last residual.
pub fn cg_solve<F>(mut apply: F, rhs: &Field2D, tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !rhs.is_finite() {
        return Err(Error::Config("right-hand side is not finite".into()));
    }
    let n = rhs.values.len();
    let b = &rhs.values;
    let b_norm = dot(b, b).sqrt();
    let mut x = Field2D::zeros(rhs.grid, rhs.unit);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut residual = 1.0;
    let mut iterations = 0;

    while iterations < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations,
                residual,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x.values[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rr_new = dot(&r, &r);
        residual = rr_new.sqrt() / b_norm;
        if residual <= tol {
            // Recursive residuals drift; certify with the true one.
            apply(&x.values, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            rr = dot(&r, &r);
            residual = rr.sqrt() / b_norm;
            if residual <= tol {
                return Ok(CgSolution {
                    x,
                    iterations,
                    residual,
                });
            }
            p.copy_from_slice(&r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::FluxStencil;
    use crate::numerics::grid::{GridSpec, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_iteration() {
        let g = GridSpec::square(8);
        let b = Field2D::from_fn(g, Unit::Volt, |ix, iy| (ix + 2 * iy) as f64 - 3.0);
        let sol = cg_solve(|x, y| y.copy_from_slice(x), &b, 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        for (a, e) in sol.x.values.iter().zip(&b.values) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    /// Negative Laplacian with Dirichlet rows at the bottom and top of the
    /// domain, applied through the same masking the simulator uses.
    fn dirichlet_laplacian(g: GridSpec) -> impl FnMut(&[f64], &mut [f64]) {
        let stencil = FluxStencil::<f64>::new(&g, &vec![1.0; g.len()]);
        let ny = g.ny;
        let fixed = move |i: usize| i % ny == 0 || i % ny == ny - 1;
        let mut tmp = vec![0.0; g.len()];
        move |x: &[f64], y: &mut [f64]| {
            for (i, t) in tmp.iter_mut().enumerate() {
                *t = if fixed(i) { 0.0 } else { x[i] };
            }
            stencil.apply(&tmp, y);
            for (i, v) in y.iter_mut().enumerate() {
                *v = if fixed(i) { x[i] } else { -*v * 1e-18 };
            }
        }
    }

    #[test]
    fn recovers_manufactured_solution() {
        let g = GridSpec::square(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x_star = Field2D::from_fn(g, Unit::Volt, |_, _| rng.random_range(-1.0..1.0));
        let mut op = dirichlet_laplacian(g);
        let mut b = Field2D::zeros(g, Unit::Volt);
        op(&x_star.values, &mut b.values);
        let tol = 1e-10;
        let sol = cg_solve(&mut op, &b, tol, 5000).unwrap();
        assert!(sol.residual <= tol);
        let mut ax = vec![0.0; g.len()];
        op(&sol.x.values, &mut ax);
        let res: f64 = ax.iter().zip(&b.values).map(|(a, e)| (a - e).powi(2)).sum::<f64>().sqrt();
        assert!(res / b.norm() <= tol);
        let err = sol.x.values.iter().zip(&x_star.values).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn reports_non_convergence() {
        let g = GridSpec::square(16);
        let b = Field2D::from_fn(g, Unit::Volt, |ix, iy| ((ix * 7 + iy * 3) % 5) as f64);
        let err = cg_solve(dirichlet_laplacian(g), &b, 1e-14, 3).unwrap_err();
        match err {
            Error::Solver { iterations, residual } => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let g = GridSpec::square(8);
        let b = Field2D::zeros(g, Unit::Volt);
        let sol = cg_solve(|_, _| unreachable!(), &b, 1e-10, 10).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.x.values.iter().all(|v| *v == 0.0));
    }
}
