//! Independent reference computations shared by integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fefet_core::numerics::fft::Complex64;

/// Direct `O(N^2)` forward DFT of an `nx x ny` real field (row-major, y fastest).
pub fn naive_dft2(x: &[f64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
    for kx in 0..nx {
        for ky in 0..ny {
            let mut acc = Complex64::new(0.0, 0.0);
            for ix in 0..nx {
                for iy in 0..ny {
                    let th = -2.0 * PI * ((kx * ix) as f64 / nx as f64 + (ky * iy) as f64 / ny as f64);
                    acc += x[ix * ny + iy] * Complex64::new(th.cos(), th.sin());
                }
            }
            out[kx * ny + ky] = acc;
        }
    }
    out
}

/// `(x ⊛ k)[i, j] = sum_{a, b} x[a, b] k[(i - a) mod nx, (j - b) mod ny]`.
pub fn circular_conv(x: &[f64], k: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let mut acc = 0.0;
            for a in 0..nx {
                for b in 0..ny {
                    acc += x[a * ny + b] * k[((i + nx - a) % nx) * ny + (j + ny - b) % ny];
                }
            }
            out[i * ny + j] = acc;
        }
    }
    out
}

/// `1 - SS_res / SS_tot` with two explicit passes.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let mut ss_tot = 0.0;
    for t in truth {
        ss_tot += (t - mean) * (t - mean);
    }
    let mut ss_res = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        ss_res += (t - p) * (t - p);
    }
    1.0 - ss_res / ss_tot
}

/// Deterministic pseudo-random values in `[-1, 1)` without touching the crate's RNG use.
pub fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}
