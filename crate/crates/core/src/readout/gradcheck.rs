//! Finite-difference checks of both networks at miniature sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{IvNetConfig, MAP_CHANNELS, N_SCALARS};
use super::ivnet::{init_ivnet, ivnet_forward, OutputScale};
use crate::error::Result;
use crate::numerics::{grad_check, Graph, GradCheckReport, Tensor};
use crate::oracle::Masks;
use crate::surrogate::{fno_forward, fno_plan, init_fno, loss_data, FnoConfig, N_INPUTS, N_OUTPUTS};

/// Largest accepted relative error of any checked entry.
pub const GRADCHECK_MAX_REL: f64 = 1e-3;
/// Largest accepted median relative error.
pub const GRADCHECK_MEDIAN_REL: f64 = 1e-5;

/// Relative perturbation; smaller steps push the tiniest spectral-weight
/// gradients (~1e-8) into round-off.
const STEP: f64 = 1e-4;
const PER_TENSOR: usize = 32;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// FNO with 3x3 modes, width 4, two layers on an 8x8 grid, masked data loss.
pub fn fno_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let cfg = FnoConfig {
        modes_x: 3,
        modes_y: 3,
        width: 4,
        n_layers: 2,
        lift_hidden: vec![4],
        proj_hidden: 5,
        ..Default::default()
    };
    let params = init_fno(&cfg, seed)?;
    let (nx, ny, b) = (8, 8, 2);
    let n = nx * ny;
    let plan = fno_plan::<f64>(&cfg, nx, ny)?;
    let band: Vec<u8> = (0..n).map(|i| (i % ny >= 2 && i % ny < 6) as u8).collect();
    let masks = Masks {
        stack: band.clone(),
        fe: band,
        interface_n: vec![0; n],
        interface_p: vec![0; n],
        channel: vec![0; n],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, b * N_INPUTS * n);
    let truth = uniform(&mut rng, b * N_OUTPUTS * n);
    let loss = |g: &mut Graph<'_, f64>| {
        let xv = g.input(Tensor::from_vec(&[b, N_INPUTS, nx, ny], x.clone()));
        let tv = g.input(Tensor::from_vec(&[b, N_OUTPUTS, nx, ny], truth.clone()));
        let y = fno_forward(g, xv, &cfg, &plan)?;
        Ok(loss_data(g, y, tv, &[&masks, &masks]))
    };
    grad_check(loss, &params, STEP, PER_TENSOR, seed)
}

/// IV-Net with a two-block encoder on 8x8 maps, squared error on the
/// floored output.
pub fn ivnet_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let cfg = IvNetConfig {
        encoder_channels: vec![3, 4],
        scalar_hidden: vec![5, 4],
        head_hidden: 6,
        n_vg: 7,
        ..Default::default()
    };
    let params = init_ivnet(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let scale = OutputScale {
        mean: (0..cfg.n_vg).map(|_| rng.random_range(-10.0..-6.0)).collect(),
        std: (0..cfg.n_vg).map(|_| rng.random_range(0.5..2.5)).collect(),
        floor: -14.0,
    };
    let b = 2;
    let maps = uniform(&mut rng, b * MAP_CHANNELS * 64);
    let scalars = uniform(&mut rng, b * N_SCALARS);
    let target: Vec<f64> = (0..b * cfg.n_vg).map(|_| rng.random_range(-11.0..-5.0)).collect();
    let loss = |g: &mut Graph<'_, f64>| {
        let m = g.input(Tensor::from_vec(&[b, MAP_CHANNELS, 8, 8], maps.clone()));
        let s = g.input(Tensor::from_vec(&[b, N_SCALARS], scalars.clone()));
        let t = g.input(Tensor::from_vec(&[b, cfg.n_vg], target.clone()));
        let out = ivnet_forward(g, m, s, &cfg, &scale)?;
        let d = g.sub(out.floored, t);
        let d2 = g.square(d);
        Ok(g.mean_all(d2))
    };
    grad_check(loss, &params, STEP, PER_TENSOR, seed)
}

/// Whether a report meets both thresholds.
pub fn gradcheck_passes(report: &GradCheckReport) -> bool {
    report.max_rel_err() < GRADCHECK_MAX_REL && report.median_rel_err() < GRADCHECK_MEDIAN_REL
}
