//! IV-Net: strided CNN over the maps, MLP over the scalars, per-feature
//! weighted fusion, then an MLP head over the gate-voltage grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{IvNetConfig, MAP_CHANNELS, N_SCALARS};
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::{ParamKind, ParamStore, Tensor};
use crate::surrogate::fno::{activate, init_linear, linear};

/// Per-point affine map from head units to log10 amperes, fixed at training
/// start from the target statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Floor on log10 I_D applied to the final output.
    pub floor: f64,
}

impl OutputScale {
    /// Column statistics of `targets` (rows of `n` points); spreads below
    /// 0.1 decade are raised to 0.1 so flat points stay trainable.
    pub fn from_targets(targets: &[&[f64]], n: usize, floor: f64) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Config("no IV targets".into()));
        }
        let m = targets.len() as f64;
        let mut mean = vec![0.0; n];
        for t in targets {
            for (a, b) in mean.iter_mut().zip(t.iter()) {
                *a += b / m;
            }
        }
        let mut var = vec![0.0; n];
        for t in targets {
            for ((v, mu), x) in var.iter_mut().zip(&mean).zip(t.iter()) {
                *v += (x - mu) * (x - mu) / m;
            }
        }
        let std = var.into_iter().map(|v: f64| v.sqrt().max(0.1)).collect();
        Ok(Self { mean, std, floor })
    }
}

pub fn init_ivnet(config: &IvNetConfig, seed: u64) -> Result<ParamStore<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let k = config.kernel;
    let mut prev = MAP_CHANNELS;
    for (i, &c) in config.encoder_channels.iter().enumerate() {
        let b = 1.0 / ((prev * k * k) as f64).sqrt();
        s.insert(format!("enc{i}.w"), Tensor::uniform(&[c, prev, k, k], -b, b, &mut rng), ParamKind::Real);
        s.insert(format!("enc{i}.b"), Tensor::uniform(&[c], -b, b, &mut rng), ParamKind::Real);
        prev = c;
    }
    let mut prev = N_SCALARS;
    for (i, &h) in config.scalar_hidden.iter().enumerate() {
        init_linear(&mut s, &format!("scal{i}"), h, prev, &mut rng);
        prev = h;
    }
    let f = config.feature_dim();
    s.insert("fuse.a", Tensor::filled(&[f], config.fusion_init), ParamKind::Real);
    s.insert("fuse.b", Tensor::filled(&[f], config.fusion_init), ParamKind::Real);
    init_linear(&mut s, "head1", config.head_hidden, f, &mut rng);
    init_linear(&mut s, "head2", config.n_vg, config.head_hidden, &mut rng);
    Ok(s)
}

/// Head output before and after the floor, both `[b, n_vg]` in log10 A.
#[derive(Debug, Clone, Copy)]
pub struct IvOutput {
    pub raw: Var,
    pub floored: Var,
}

/// `maps: [b, 5, nx, ny]` normalized, `scalars: [b, 3]`.
pub fn ivnet_forward<T: Real>(
    g: &mut Graph<'_, T>,
    maps: Var,
    scalars: Var,
    config: &IvNetConfig,
    scale: &OutputScale,
) -> Result<IvOutput> {
    let b = g.shape(maps)[0];
    if g.shape(maps)[1] != MAP_CHANNELS || g.shape(scalars) != [b, N_SCALARS] {
        return Err(Error::Config(format!(
            "IV-Net inputs must be [b, {MAP_CHANNELS}, nx, ny] and [b, {N_SCALARS}], got {:?} and {:?}",
            g.shape(maps),
            g.shape(scalars)
        )));
    }
    if scale.mean.len() != config.n_vg || scale.std.len() != config.n_vg {
        return Err(Error::Config("output scale does not match n_vg".into()));
    }
    let mut h = maps;
    for i in 0..config.encoder_channels.len() {
        let w = g.param(&format!("enc{i}.w"))?;
        let bias = g.param(&format!("enc{i}.b"))?;
        h = g.conv2d(h, w, config.stride, config.kernel / 2);
        h = g.add_channel(h, bias);
        h = activate(g, h, config.activation);
    }
    let pooled = g.global_avg_pool(h);
    let f_map = g.reshape(pooled, &[b, config.feature_dim()]);

    let mut s = scalars;
    for i in 0..config.scalar_hidden.len() {
        s = linear(g, &format!("scal{i}"), s)?;
        s = activate(g, s, config.activation);
    }
    let a = g.param("fuse.a")?;
    let bw = g.param("fuse.b")?;
    let fa = g.scale_channel(f_map, a);
    let fb = g.scale_channel(s, bw);
    let fused = g.add(fa, fb);

    let h = linear(g, "head1", fused)?;
    let h = activate(g, h, config.activation);
    let h = linear(g, "head2", h)?;
    let raw = g.channel_affine(h, &scale.std, &scale.mean);
    let floored = g.clamp_min(raw, scale.floor);
    Ok(IvOutput { raw, floored })
}
