//! Finite-difference operators on cell-centred grids. Spacings are taken
//! from the grid in nm and converted to metres.

use super::grid::{Field2D, GridSpec, Unit, NM};
use super::real::Real;
use crate::error::{Error, Result};

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Face coefficients of the flux-form operator `div(eps grad phi)`.
///
/// `east[i]` couples cell `(ix, iy)` with `(ix+1, iy)`, `north[i]` couples it
/// with `(ix, iy+1)`. Faces on the domain boundary carry zero flux.
#[derive(Debug, Clone)]
pub struct FluxStencil<T> {
    pub nx: usize,
    pub ny: usize,
    east: Vec<T>,
    north: Vec<T>,
}

impl<T: Real> FluxStencil<T> {
    pub fn new(grid: &GridSpec, eps: &[f64]) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let hx2 = (grid.dx * NM).powi(2);
        let hy2 = (grid.dy * NM).powi(2);
        let mut east = vec![T::zero(); nx * ny];
        let mut north = vec![T::zero(); nx * ny];
        for ix in 0..nx {
            for iy in 0..ny {
                let i = ix * ny + iy;
                if ix + 1 < nx {
                    east[i] = T::of(harmonic(eps[i], eps[i + ny]) / hx2);
                }
                if iy + 1 < ny {
                    north[i] = T::of(harmonic(eps[i], eps[i + 1]) / hy2);
                }
            }
        }
        Self { nx, ny, east, north }
    }

    /// `out = div(eps grad phi)`. The operator is symmetric, so this is also
    /// its own adjoint.
    pub fn apply(&self, phi: &[T], out: &mut [T]) {
        let ny = self.ny;
        out.iter_mut().for_each(|v| *v = T::zero());
        for ix in 0..self.nx {
            for iy in 0..ny {
                let i = ix * ny + iy;
                let e = self.east[i];
                if e != T::zero() {
                    let flux = e * (phi[i + ny] - phi[i]);
                    out[i] = out[i] + flux;
                    out[i + ny] = out[i + ny] - flux;
                }
                let n = self.north[i];
                if n != T::zero() {
                    let flux = n * (phi[i + 1] - phi[i]);
                    out[i] = out[i] + flux;
                    out[i + 1] = out[i + 1] - flux;
                }
            }
        }
    }

    /// Sum of the face coefficients touching each cell (the negated diagonal).
    pub fn diagonal(&self) -> Vec<T> {
        let ny = self.ny;
        let mut d = vec![T::zero(); self.nx * ny];
        for i in 0..d.len() {
            let (ix, iy) = (i / ny, i % ny);
            let mut s = self.east[i] + self.north[i];
            if ix > 0 {
                s = s + self.east[i - ny];
            }
            if iy > 0 {
                s = s + self.north[i - 1];
            }
            d[i] = s;
        }
        d
    }
}

/// Discrete `div(eps grad phi)`: five-point flux form with harmonic-mean face
/// permittivity and zero flux through the domain boundary.
pub fn fd_div_eps_grad(phi: &Field2D, eps: &Field2D) -> Result<Field2D> {
    phi.check_same_shape(eps)?;
    if let Some(bad) = eps.values.iter().find(|&&e| !(e > 0.0)) {
        return Err(Error::Config(format!("permittivity must be positive, got {bad}")));
    }
    let stencil = FluxStencil::<f64>::new(&phi.grid, &eps.values);
    let mut out = Field2D::zeros(phi.grid, Unit::CoulombPerM3);
    stencil.apply(&phi.values, &mut out.values);
    Ok(out)
}

/// `d/dy` with central differences inside and first-order one-sided
/// differences on the bottom and top rows.
pub fn ddy_into<T: Real>(nx: usize, ny: usize, dy_m: f64, f: &[T], out: &mut [T]) {
    let inv = T::of(1.0 / dy_m);
    let half = T::of(0.5 / dy_m);
    for ix in 0..nx {
        let row = &f[ix * ny..(ix + 1) * ny];
        let o = &mut out[ix * ny..(ix + 1) * ny];
        o[0] = (row[1] - row[0]) * inv;
        for iy in 1..ny - 1 {
            o[iy] = (row[iy + 1] - row[iy - 1]) * half;
        }
        o[ny - 1] = (row[ny - 1] - row[ny - 2]) * inv;
    }
}

/// Transpose of [`ddy_into`].
pub fn ddy_adjoint_into<T: Real>(nx: usize, ny: usize, dy_m: f64, g: &[T], out: &mut [T]) {
    let inv = T::of(1.0 / dy_m);
    let half = T::of(0.5 / dy_m);
    out.iter_mut().for_each(|v| *v = T::zero());
    for ix in 0..nx {
        let gr = &g[ix * ny..(ix + 1) * ny];
        let o = &mut out[ix * ny..(ix + 1) * ny];
        o[1] = o[1] + gr[0] * inv;
        o[0] = o[0] - gr[0] * inv;
        for iy in 1..ny - 1 {
            o[iy + 1] = o[iy + 1] + gr[iy] * half;
            o[iy - 1] = o[iy - 1] - gr[iy] * half;
        }
        o[ny - 1] = o[ny - 1] + gr[ny - 1] * inv;
        o[ny - 2] = o[ny - 2] - gr[ny - 1] * inv;
    }
}

pub fn fd_ddy(field: &Field2D) -> Field2D {
    let g = field.grid;
    let mut out = Field2D::zeros(g, field.unit);
    ddy_into(g.nx, g.ny, g.dy * NM, &field.values, &mut out.values);
    out
}
