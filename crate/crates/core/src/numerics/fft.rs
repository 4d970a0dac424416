//! Real-input 2D Fourier transforms.
//!
//! Convention: unnormalized forward transform, `1/(nx*ny)` on the inverse.
//! Spectra keep the full first axis and the non-negative half of the second
//! axis (`ny/2 + 1` columns). [`SpectralPlan`] additionally supports keeping
//! only a low-frequency corner set: `kx` in `0..mx` and `nx-mx..nx`, `ky` in
//! `0..my`. The inverse follows complex-to-real semantics: the imaginary parts
//! of self-conjugate columns (`ky = 0`, `ky = ny/2`) are ignored.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::grid::{Field2D, GridSpec, Unit};
use super::real::Real;
use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Half spectrum of a real [`Field2D`]; `data[kx * (ny/2+1) + ky]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    pub grid: GridSpec,
    pub data: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn half_ny(&self) -> usize {
        self.grid.ny / 2 + 1
    }

    pub fn at(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[kx * self.half_ny() + ky]
    }
}

fn check_pow2(nx: usize, ny: usize) -> Result<()> {
    if !nx.is_power_of_two() || !ny.is_power_of_two() || nx < 2 || ny < 2 {
        return Err(Error::Config(format!(
            "FFT dimensions {nx}x{ny} must be powers of two"
        )));
    }
    Ok(())
}

pub fn fft2(field: &Field2D) -> Result<Spectrum2D> {
    let g = field.grid;
    let plan = SpectralPlan::<f64>::full(g.nx, g.ny)?;
    let mut data = vec![Complex64::default(); plan.n_modes()];
    plan.forward(&field.values, &mut data);
    Ok(Spectrum2D { grid: g, data })
}

pub fn ifft2(spec: &Spectrum2D, unit: Unit) -> Result<Field2D> {
    let g = spec.grid;
    let plan = SpectralPlan::<f64>::full(g.nx, g.ny)?;
    if spec.data.len() != plan.n_modes() {
        return Err(Error::Config("spectrum size does not match grid".into()));
    }
    let mut values = vec![0.0; g.len()];
    plan.inverse(&spec.data, &mut values);
    Ok(Field2D {
        grid: g,
        values,
        unit,
    })
}

/// Precomputed FFT plans for one grid size and retained-mode set.
pub struct SpectralPlan<T: Real> {
    pub nx: usize,
    pub ny: usize,
    pub mx: usize,
    pub my: usize,
    fwd_x: Arc<dyn Fft<T>>,
    inv_x: Arc<dyn Fft<T>>,
    fwd_y: Arc<dyn Fft<T>>,
    inv_y: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for SpectralPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("mx", &self.mx)
            .field("my", &self.my)
            .finish()
    }
}

impl<T: Real> SpectralPlan<T> {
    pub fn new(nx: usize, ny: usize, mx: usize, my: usize) -> Result<Self> {
        check_pow2(nx, ny)?;
        if mx == 0 || my == 0 || mx > nx / 2 || my > ny / 2 + 1 {
            return Err(Error::Config(format!(
                "retained modes {mx}x{my} do not fit a {nx}x{ny} grid"
            )));
        }
        let mut planner = FftPlanner::<T>::new();
        Ok(Self {
            nx,
            ny,
            mx,
            my,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        })
    }

    /// Every mode of the half spectrum.
    pub fn full(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, nx / 2, ny / 2 + 1)
    }

    pub fn n_modes(&self) -> usize {
        2 * self.mx * self.my
    }

    /// Wavenumber index along x of retained row `r`.
    #[inline]
    pub fn kx(&self, r: usize) -> usize {
        if r < self.mx {
            r
        } else {
            self.nx - 2 * self.mx + r
        }
    }

    /// Multiplicity of column `ky` in the Hermitian extension.
    #[inline]
    fn column_weight(&self, ky: usize) -> T {
        if ky == 0 || 2 * ky == self.ny {
            T::one()
        } else {
            T::of(2.0)
        }
    }

    fn row_pass(&self, x: &[T]) -> Vec<Complex<T>> {
        let mut rows: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fwd_y.process(&mut rows);
        rows
    }

    /// Retained modes of the unnormalized forward transform of `x`.
    pub fn forward(&self, x: &[T], out: &mut [Complex<T>]) {
        let (nx, ny, my) = (self.nx, self.ny, self.my);
        debug_assert_eq!(x.len(), nx * ny);
        let rows = self.row_pass(x);
        let mut cols = vec![Complex::default(); my * nx];
        for ix in 0..nx {
            for ky in 0..my {
                cols[ky * nx + ix] = rows[ix * ny + ky];
            }
        }
        self.fwd_x.process(&mut cols);
        for r in 0..2 * self.mx {
            let kx = self.kx(r);
            for ky in 0..my {
                out[r * my + ky] = cols[ky * nx + kx];
            }
        }
    }

    /// True for the coefficient at `kx = -mx` in a self-conjugate column
    /// (`ky = 0` or the Nyquist column). Its partner `+mx` is not retained,
    /// so the inverse drops it to keep truncation an exact projection.
    #[inline]
    pub fn is_unpaired(&self, r: usize, ky: usize) -> bool {
        2 * self.mx < self.nx && r == self.mx && (ky == 0 || 2 * ky == self.ny)
    }

    fn column_inverse(&self, coeffs: &[Complex<T>], drop_unpaired: bool) -> Vec<Complex<T>> {
        let (nx, my) = (self.nx, self.my);
        let mut cols = vec![Complex::default(); my * nx];
        for r in 0..2 * self.mx {
            let kx = self.kx(r);
            for ky in 0..my {
                if drop_unpaired && self.is_unpaired(r, ky) {
                    continue;
                }
                cols[ky * nx + kx] = coeffs[r * my + ky];
            }
        }
        self.inv_x.process(&mut cols);
        cols
    }

    /// Real field whose retained spectrum is `coeffs` (complex-to-real
    /// semantics, `1/(nx*ny)` normalization).
    pub fn inverse(&self, coeffs: &[Complex<T>], out: &mut [T]) {
        let (nx, ny, my) = (self.nx, self.ny, self.my);
        let cols = self.column_inverse(coeffs, true);
        let mut rows = vec![Complex::default(); nx * ny];
        for ix in 0..nx {
            let row = &mut rows[ix * ny..(ix + 1) * ny];
            for ky in 0..my {
                let v = cols[ky * nx + ix];
                row[ky] = v;
                if ky != 0 && 2 * ky != ny {
                    row[ny - ky] = v.conj();
                }
            }
        }
        self.inv_y.process(&mut rows);
        let scale = T::one() / T::of((nx * ny) as f64);
        for (o, v) in out.iter_mut().zip(&rows) {
            *o = v.re * scale;
        }
    }

    /// Transpose of [`forward`](Self::forward) with respect to the real inner
    /// product on (re, im) pairs: `Re(sum_k g_k e^{+i theta_k n})`.
    pub fn forward_adjoint(&self, g: &[Complex<T>], out: &mut [T]) {
        let (nx, ny, my) = (self.nx, self.ny, self.my);
        let cols = self.column_inverse(g, false);
        let mut rows = vec![Complex::default(); nx * ny];
        for ix in 0..nx {
            for ky in 0..my {
                rows[ix * ny + ky] = cols[ky * nx + ix];
            }
        }
        self.inv_y.process(&mut rows);
        for (o, v) in out.iter_mut().zip(&rows) {
            *o = v.re;
        }
    }

    /// Transpose of [`inverse`](Self::inverse): `(w_ky / N) * forward(dy)`.
    pub fn inverse_adjoint(&self, dy: &[T], out: &mut [Complex<T>]) {
        self.forward(dy, out);
        let inv_n = T::one() / T::of((self.nx * self.ny) as f64);
        for r in 0..2 * self.mx {
            for ky in 0..self.my {
                let w = if self.is_unpaired(r, ky) {
                    T::zero()
                } else {
                    self.column_weight(ky) * inv_n
                };
                out[r * self.my + ky] = out[r * self.my + ky] * w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(nx: usize, ny: usize, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = GridSpec::square(nx);
        g.ny = ny;
        Field2D::from_fn(g, Unit::Dimensionless, |_, _| rng.random_range(-1.0..1.0))
    }

    /// O(n^4) direct DFT used as the reference.
    fn naive_dft(f: &Field2D) -> Vec<Complex64> {
        let (nx, ny) = (f.grid.nx, f.grid.ny);
        let h = ny / 2 + 1;
        let mut out = vec![Complex64::default(); nx * h];
        for kx in 0..nx {
            for ky in 0..h {
                let mut s = Complex64::default();
                for ix in 0..nx {
                    for iy in 0..ny {
                        let th = -2.0 * PI * (kx * ix) as f64 / nx as f64
                            - 2.0 * PI * (ky * iy) as f64 / ny as f64;
                        s += Complex64::from_polar(f.at(ix, iy), th);
                    }
                }
                out[kx * h + ky] = s;
            }
        }
        out
    }

    #[test]
    fn constant_field_has_only_dc() {
        let g = GridSpec::square(8);
        let f = Field2D::from_fn(g, Unit::Volt, |_, _| 2.5);
        let s = fft2(&f).unwrap();
        assert!((s.at(0, 0) - Complex64::new(64.0 * 2.5, 0.0)).norm() < 1e-12);
        let others: f64 = s.data.iter().skip(1).map(|c| c.norm()).sum();
        assert!(others < 1e-12);
    }

    #[test]
    fn single_harmonic_has_two_coefficients() {
        let g = GridSpec::square(8);
        let f = Field2D::from_fn(g, Unit::Volt, |ix, _| (2.0 * PI * ix as f64 / 8.0).cos());
        let s = fft2(&f).unwrap();
        let nonzero: Vec<_> = (0..8)
            .flat_map(|kx| (0..5).map(move |ky| (kx, ky)))
            .filter(|&(kx, ky)| s.at(kx, ky).norm() > 1e-9)
            .collect();
        assert_eq!(nonzero, vec![(1, 0), (7, 0)]);
        assert!((s.at(1, 0).re - 32.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_dft_on_8x8() {
        let f = random_field(8, 8, 7);
        let s = fft2(&f).unwrap();
        let reference = naive_dft(&f);
        for (a, b) in s.data.iter().zip(&reference) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut g = GridSpec::square(8);
        g.nx = 12;
        let f = Field2D::zeros(g, Unit::Volt);
        assert!(matches!(fft2(&f), Err(Error::Config(_))));
    }

    #[test]
    fn truncation_is_a_projection() {
        let f = random_field(16, 16, 3);
        let plan = SpectralPlan::<f64>::new(16, 16, 3, 3).unwrap();
        let mut c = vec![Complex64::default(); plan.n_modes()];
        plan.forward(&f.values, &mut c);
        let mut once = vec![0.0; 256];
        plan.inverse(&c, &mut once);
        let mut c2 = vec![Complex64::default(); plan.n_modes()];
        plan.forward(&once, &mut c2);
        let mut twice = vec![0.0; 256];
        plan.inverse(&c2, &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoints_pass_dot_product_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(nx, ny, mx, my) in &[(8, 8, 4, 5), (16, 8, 3, 2), (8, 16, 2, 4)] {
            let plan = SpectralPlan::<f64>::new(nx, ny, mx, my).unwrap();
            let x: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<Complex64> = (0..plan.n_modes())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let mut fx = vec![Complex64::default(); plan.n_modes()];
            plan.forward(&x, &mut fx);
            let mut ftg = vec![0.0; nx * ny];
            plan.forward_adjoint(&g, &mut ftg);
            let lhs: f64 = fx.iter().zip(&g).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            let rhs: f64 = x.iter().zip(&ftg).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

            let mut ig = vec![0.0; nx * ny];
            plan.inverse(&g, &mut ig);
            let mut itx = vec![Complex64::default(); plan.n_modes()];
            plan.inverse_adjoint(&x, &mut itx);
            let lhs: f64 = ig.iter().zip(&x).map(|(a, b)| a * b).sum();
            let rhs: f64 = g.iter().zip(&itx).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]
        #[test]
        fn round_trip_and_parseval(lx in 3u32..7, ly in 3u32..7, seed in 0u64..1000) {
            let f = random_field(1 << lx, 1 << ly, seed);
            let s = fft2(&f).unwrap();
            let back = ifft2(&s, Unit::Dimensionless).unwrap();
            let scale = f.norm();
            for (a, b) in f.values.iter().zip(&back.values) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
            let ny = f.grid.ny;
            let energy: f64 = (0..f.grid.nx)
                .flat_map(|kx| (0..ny / 2 + 1).map(move |ky| (kx, ky)))
                .map(|(kx, ky)| {
                    let w = if ky == 0 || 2 * ky == ny { 1.0 } else { 2.0 };
                    w * s.at(kx, ky).norm_sqr()
                })
                .sum::<f64>()
                / f.grid.len() as f64;
            let direct = f.dot(&f);
            proptest::prop_assert!((energy - direct).abs() <= 1e-10 * direct);
        }
    }
}
