//! Fourier neural operator: pointwise lift, spectral layers, pointwise projection.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, FnoConfig, N_INPUTS, N_OUTPUTS};
use crate::error::Result;
use crate::numerics::fft::SpectralPlan;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::{ParamKind, ParamStore, Tensor};
use crate::oracle::Masks;

pub(crate) fn activate<T: Real>(g: &mut Graph<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => g.gelu(x),
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weight and bias.
pub(crate) fn init_linear(store: &mut ParamStore<f64>, name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) {
    let b = 1.0 / (inp as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::uniform(&[out, inp], -b, b, rng), ParamKind::Real);
    store.insert(format!("{name}.b"), Tensor::uniform(&[out], -b, b, rng), ParamKind::Real);
}

/// Pointwise `w x + b` over channels.
pub(crate) fn linear<T: Real>(g: &mut Graph<'_, T>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    let y = g.channel_mix(w, x);
    Ok(g.add_channel(y, b))
}

pub fn spectral_name(layer: usize) -> String {
    format!("fourier{layer}.spectral")
}

/// Seeded initial weights.
pub fn init_fno(config: &FnoConfig, seed: u64) -> Result<ParamStore<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let w = config.width;
    let mut prev = N_INPUTS;
    for (i, &h) in config.lift_hidden.iter().enumerate() {
        init_linear(&mut s, &format!("lift{i}"), h, prev, &mut rng);
        prev = h;
    }
    init_linear(&mut s, "lift", w, prev, &mut rng);
    let scale = 1.0 / (w * w) as f64;
    for l in 0..config.n_layers {
        let shape = [w, w, 2 * config.modes_x, config.modes_y, 2];
        s.insert(spectral_name(l), Tensor::uniform(&shape, 0.0, scale, &mut rng), ParamKind::Complex);
        init_linear(&mut s, &format!("fourier{l}.bypass"), w, w, &mut rng);
    }
    init_linear(&mut s, "proj1", config.proj_hidden, w, &mut rng);
    init_linear(&mut s, "proj2", N_OUTPUTS, config.proj_hidden, &mut rng);
    Ok(s)
}

/// Input planes `[7, nx, ny]`: x and y coordinates in `[0, (n-1)/n]`, stack
/// mask, FE mask, then the three scalars broadcast.
pub fn lift_inputs(scalars: &[f64; 3], nx: usize, ny: usize, masks: &Masks) -> Vec<f64> {
    let n = nx * ny;
    assert_eq!(masks.stack.len(), n, "mask resolution does not match the grid");
    let mut out = Vec::with_capacity(N_INPUTS * n);
    out.extend((0..n).map(|i| (i / ny) as f64 / nx as f64));
    out.extend((0..n).map(|i| (i % ny) as f64 / ny as f64));
    out.extend(masks.stack.iter().map(|&m| m as f64));
    out.extend(masks.fe.iter().map(|&m| m as f64));
    for s in scalars {
        out.extend(std::iter::repeat_n(*s, n));
    }
    out
}

/// Shared FFT plan for a grid and mode budget.
pub fn fno_plan<T: Real>(config: &FnoConfig, nx: usize, ny: usize) -> Result<Arc<SpectralPlan<T>>> {
    config.check_grid(nx, ny)?;
    Ok(Arc::new(SpectralPlan::new(nx, ny, config.modes_x, config.modes_y)?))
}

/// Records the forward pass of `x: [b, 7, nx, ny]` -> `[b, 5, nx, ny]`.
pub fn fno_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    config: &FnoConfig,
    plan: &Arc<SpectralPlan<T>>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    config.check_grid(shape[2], shape[3])?;
    let mut y = x;
    for i in 0..config.lift_hidden.len() {
        y = linear(g, &format!("lift{i}"), y)?;
        y = activate(g, y, config.activation);
    }
    y = linear(g, "lift", y)?;
    for l in 0..config.n_layers {
        let w = g.param(&spectral_name(l))?;
        let spec = g.spectral_conv(y, w, plan.clone());
        let bypass = linear(g, &format!("fourier{l}.bypass"), y)?;
        y = g.add(spec, bypass);
        if l + 1 < config.n_layers {
            y = activate(g, y, config.activation);
        }
    }
    let h = linear(g, "proj1", y)?;
    let h = activate(g, h, config.activation);
    linear(g, "proj2", h)
}
