//! FNO / PINO training over whole trajectories.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{FnoConfig, LossWeights, OptimConfig, N_INPUTS, N_OUTPUTS};
use super::fno::{fno_forward, fno_plan, init_fno, lift_inputs};
use super::loss::{aggregates_graph, loss_data, loss_mono, loss_poisson, mono_pairs, PhysicsScales, SampleGeometry};
use super::model::{FnoMeta, FnoModel, FNO_KIND};
use super::optim::Adam;
use crate::dataset::{load_trajectory_batch, time_embed, Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::tensor::{ParamStore, Tensor};
use crate::oracle::poisson::{poisson_source, stack_interior};
use crate::oracle::{build_geometry, Geometry, Masks};

/// Everything that determines an FNO training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FnoTrainSpec {
    pub fno: FnoConfig,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub seed: u64,
}

/// Mean loss components over one epoch. Physics terms are 0 when their
/// weight is 0 (they are not evaluated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub data: f64,
    pub poisson: f64,
    pub mono: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FnoRun {
    pub model: FnoModel,
    pub history: Vec<EpochRecord>,
}

/// One trajectory prepared for repeated forward passes.
struct Prepared<T: Real> {
    inputs: Tensor<T>,
    truth: Tensor<T>,
    masks: Vec<Masks>,
    geoms: Vec<Arc<SampleGeometry<T>>>,
    s_tau: Vec<f64>,
}

/// Cache of geometries keyed by thickness.
pub(crate) struct GeometryCache<'a> {
    dataset: &'a Dataset,
    cache: HashMap<u64, Arc<Geometry>>,
}

impl<'a> GeometryCache<'a> {
    pub(crate) fn new(dataset: &'a Dataset) -> Self {
        Self {
            dataset,
            cache: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, t_hzo: f64) -> Result<Arc<Geometry>> {
        if let Some(g) = self.cache.get(&t_hzo.to_bits()) {
            return Ok(g.clone());
        }
        let m = &self.dataset.manifest;
        let g = Arc::new(build_geometry(t_hzo, &m.oracle_config, &m.grid)?);
        self.cache.insert(t_hzo.to_bits(), g.clone());
        Ok(g)
    }
}

/// Physics reference scales from the seen split.
pub fn physics_scales(dataset: &Dataset) -> Result<PhysicsScales> {
    let m = &dataset.manifest;
    let seen = m.sample_indices(Split::Seen);
    let mut geos = GeometryCache::new(dataset);
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut p_ref, mut q_ref) = (0.0f64, 0.0f64);
    for &i in &seen {
        let rec = &m.samples[i];
        let geo = geos.get(rec.params.t_hzo)?;
        let b = dataset.load_bundle(i)?;
        let src = poisson_source(&b.p_y.values, &b.n_t.values, &b.p_t.values, &geo);
        for (s, inside) in src.iter().zip(stack_interior(&geo)) {
            if inside {
                sum += s * s;
                count += 1;
            }
        }
        p_ref = p_ref.max(rec.aggregates.p_bar);
        q_ref = q_ref.max(rec.aggregates.q_bar());
    }
    let scales = PhysicsScales {
        r_scale: (sum / count.max(1) as f64).sqrt(),
        p_ref,
        q_ref,
    };
    scales.validate()?;
    Ok(scales)
}

fn prepare<T: Real>(
    dataset: &Dataset,
    ids: &[String],
    geos: &mut GeometryCache,
    sample_geoms: &mut HashMap<u64, Arc<SampleGeometry<T>>>,
) -> Result<Vec<Prepared<T>>> {
    let grid = dataset.manifest.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let batch = load_trajectory_batch(dataset, &[id.as_str()])?;
        let b = batch.samples.len();
        let mut inputs = Vec::with_capacity(b * N_INPUTS * nx * ny);
        let mut truth = Vec::with_capacity(b * N_OUTPUTS * nx * ny);
        let mut geoms = Vec::with_capacity(b);
        let mut s_tau = Vec::with_capacity(b);
        for s in &batch.samples {
            inputs.extend(lift_inputs(&s.scalars, nx, ny, &s.masks).into_iter().map(T::of));
            truth.extend(s.maps.iter().map(|&v| T::of(v)));
            let key = s.params.t_hzo.to_bits();
            let sg = match sample_geoms.get(&key) {
                Some(sg) => sg.clone(),
                None => {
                    let sg = Arc::new(SampleGeometry::new(&*geos.get(s.params.t_hzo)?));
                    sample_geoms.insert(key, sg.clone());
                    sg
                }
            };
            geoms.push(sg);
            s_tau.push(time_embed(s.params.tau)?);
        }
        out.push(Prepared {
            inputs: Tensor::from_vec(&[b, N_INPUTS, nx, ny], inputs),
            truth: Tensor::from_vec(&[b, N_OUTPUTS, nx, ny], truth),
            masks: batch.samples.into_iter().map(|s| s.masks).collect(),
            geoms,
            s_tau,
        });
    }
    Ok(out)
}

/// Loss terms of one batch on a recorded graph.
pub(crate) struct BatchLoss {
    pub total: Var,
    pub data: f64,
    pub poisson: f64,
    pub mono: f64,
}

#[allow(clippy::too_many_arguments)]
fn batch_loss<T: Real>(
    g: &mut Graph<'_, T>,
    batch: &[&Prepared<T>],
    fno: &FnoConfig,
    plan: &Arc<crate::numerics::fft::SpectralPlan<T>>,
    weights: &LossWeights,
    stats: &NormStats,
    scales: &PhysicsScales,
) -> Result<BatchLoss> {
    let cat = |f: &dyn Fn(&Prepared<T>) -> &Tensor<T>| {
        let mut shape = f(batch[0]).shape.clone();
        shape[0] = batch.iter().map(|p| f(p).shape[0]).sum();
        Tensor::from_vec(&shape, batch.iter().flat_map(|p| f(p).data.iter().copied()).collect())
    };
    let x = g.input(cat(&|p| &p.inputs));
    let truth = g.input(cat(&|p| &p.truth));
    let masks: Vec<&Masks> = batch.iter().flat_map(|p| p.masks.iter()).collect();
    let geoms: Vec<Arc<SampleGeometry<T>>> = batch.iter().flat_map(|p| p.geoms.iter().cloned()).collect();
    let pred = fno_forward(g, x, fno, plan)?;

    let ld = loss_data(g, pred, truth, &masks);
    let data = g.scalar(ld).f64();
    let mut total = g.scale(ld, weights.data);
    let mut poisson = 0.0;
    if weights.poisson > 0.0 {
        let lp = loss_poisson(g, pred, stats, &geoms, scales.r_scale);
        poisson = g.scalar(lp).f64();
        let w = g.scale(lp, weights.poisson);
        total = g.add(total, w);
    }
    let mut mono = 0.0;
    if weights.mono > 0.0 {
        let mut ranges = Vec::new();
        let mut s_tau = Vec::new();
        for p in batch {
            let start = s_tau.len();
            s_tau.extend_from_slice(&p.s_tau);
            ranges.push(start..s_tau.len());
        }
        let (pairs, ds) = mono_pairs(&ranges, &s_tau)?;
        let (pv, qv) = aggregates_graph(g, pred, stats, &geoms, scales);
        if let Some(lm) = loss_mono(g, pv, qv, pairs, &ds) {
            mono = g.scalar(lm).f64();
            let w = g.scale(lm, weights.mono);
            total = g.add(total, w);
        }
    }
    Ok(BatchLoss {
        total,
        data,
        poisson,
        mono,
    })
}

fn diverged(epoch: usize, reason: String, last_good: &ParamStore<f64>, meta: &FnoMeta) -> Error {
    let bytes = Checkpoint::new(last_good.cast::<f32>(), meta)
        .and_then(|c| c.to_bytes())
        .unwrap_or_default();
    Error::Diverged {
        epoch,
        reason,
        last_good: Box::new(bytes),
    }
}

/// Trains on the seen split, one or more whole trajectories per step.
/// Forward and backward passes run in `f32`; the optimizer keeps `f64`
/// master weights. Deterministic for a fixed seed.
pub fn train_fno(dataset: &Dataset, spec: &FnoTrainSpec, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<FnoRun> {
    spec.fno.validate()?;
    spec.weights.validate()?;
    spec.optim.validate()?;
    let m = &dataset.manifest;
    let grid = m.grid;
    let plan = fno_plan::<f32>(&spec.fno, grid.nx, grid.ny)?;
    let stats = dataset.norm_stats()?.clone();
    let scales = physics_scales(dataset)?;
    let ids: Vec<String> = m.trajectories_in(Split::Seen).into_iter().map(|t| t.id).collect();
    if ids.is_empty() {
        return Err(Error::Config("no seen trajectories to train on".into()));
    }
    let mut geos = GeometryCache::new(dataset);
    let prepared = prepare::<f32>(dataset, &ids, &mut geos, &mut HashMap::new())?;

    let mut fno = spec.fno.clone();
    fno.train_resolution = grid.nx;
    let mut meta = FnoMeta {
        kind: FNO_KIND.into(),
        fno,
        loss_weights: spec.weights,
        optim: spec.optim.clone(),
        seed: spec.seed,
        stats: stats.clone(),
        scales,
        grid,
        oracle_config: m.oracle_config.clone(),
        dataset_hash: m.config_hash.clone(),
        epochs_completed: 0,
    };

    let mut master = init_fno(&spec.fno, spec.seed)?;
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f00d);
    let per_epoch = prepared.len().div_ceil(spec.optim.batch_trajectories);
    let total_steps = per_epoch * spec.optim.epochs;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(spec.optim.epochs);
    let mut step = 0;
    for epoch in 0..spec.optim.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut weight_sum = 0.0;
        let lr_first = spec.optim.lr_at(step, total_steps);
        for chunk in order.chunks(spec.optim.batch_trajectories) {
            let batch: Vec<&Prepared<f32>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let params = master.cast::<f32>();
            let (loss, grads) = {
                let mut g = Graph::new(&params);
                let l = batch_loss(&mut g, &batch, &meta.fno, &plan, &spec.weights, &stats, &scales)?;
                let total = g.scalar(l.total).f64();
                if !total.is_finite() {
                    return Err(diverged(epoch, format!("non-finite loss {total}"), &master, &meta));
                }
                let grads = g.backward(l.total)?;
                ((total, l.data, l.poisson, l.mono), grads)
            };
            let lr = spec.optim.lr_at(step, total_steps);
            let snapshot = master.clone();
            adam.step(&mut master, &grads, lr, &spec.optim);
            if !master.is_finite() {
                return Err(diverged(epoch, "non-finite weights after update".into(), &snapshot, &meta));
            }
            step += 1;
            let w = batch.iter().map(|p| p.s_tau.len()).sum::<usize>() as f64;
            for (s, v) in sums.iter_mut().zip([loss.0, loss.1, loss.2, loss.3]) {
                *s += w * v;
            }
            weight_sum += w;
        }
        let rec = EpochRecord {
            epoch,
            lr: lr_first,
            total: sums[0] / weight_sum,
            data: sums[1] / weight_sum,
            poisson: sums[2] / weight_sum,
            mono: sums[3] / weight_sum,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    meta.epochs_completed = spec.optim.epochs;
    Ok(FnoRun {
        model: FnoModel {
            meta,
            params: master.cast::<f32>(),
        },
        history,
    })
}
