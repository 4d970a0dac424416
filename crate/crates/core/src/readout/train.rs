//! IV-Net training on oracle or FNO-predicted maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{IvTrainSpec, MapSource, MAP_CHANNELS, N_SCALARS};
use super::ivnet::{init_ivnet, ivnet_forward, OutputScale};
use super::model::{IvNetMeta, IvNetModel, IVNET_KIND};
use crate::dataset::{load_trajectory_batch, sha256_hex, Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::graph::Graph;
use crate::numerics::tensor::Tensor;
use crate::surrogate::train::GeometryCache;
use crate::surrogate::{Adam, Checkpoint, FnoModel};

/// One training example: normalized maps, embedded scalars, target curve.
#[derive(Debug, Clone)]
pub struct IvExample {
    pub index: usize,
    pub maps: Vec<f64>,
    pub scalars: [f64; 3],
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvEpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error in decades² on the unfloored head output.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct IvRun {
    pub model: IvNetModel,
    pub history: Vec<IvEpochRecord>,
}

/// Examples for every sample of `split`, with maps from the oracle files or
/// from `fno` predictions at the dataset grid.
pub fn iv_examples(dataset: &Dataset, split: Split, source: MapSource, fno: Option<&FnoModel>) -> Result<Vec<IvExample>> {
    let m = &dataset.manifest;
    let mut out = Vec::new();
    let mut geos = GeometryCache::new(dataset);
    for traj in m.trajectories_in(split) {
        let batch = load_trajectory_batch(dataset, &[traj.id.as_str()])?;
        let predicted = match source {
            MapSource::Oracle => None,
            MapSource::Fno => {
                let fno = fno.ok_or_else(|| Error::Usage("map source fno needs an FNO checkpoint".into()))?;
                if fno.meta.dataset_hash != m.config_hash {
                    return Err(Error::Config(format!(
                        "FNO was trained on dataset {} but this dataset is {}",
                        fno.meta.dataset_hash, m.config_hash
                    )));
                }
                let geo = geos.get(traj.t_hzo)?;
                let devices: Vec<_> = batch.samples.iter().map(|s| (s.params, &*geo)).collect();
                Some(fno.predict_normalized(&devices)?)
            }
        };
        for (k, s) in batch.samples.into_iter().enumerate() {
            let maps = match &predicted {
                Some(p) => p[k].clone(),
                None => s.maps,
            };
            let mut target = m.samples[s.index].iv.log10_id.clone();
            let floor = m.oracle_config.log10_i_floor;
            target.iter_mut().for_each(|v| *v = v.max(floor));
            out.push(IvExample {
                index: s.index,
                maps,
                scalars: s.scalars,
                target,
            });
        }
    }
    Ok(out)
}

/// Trains on the seen split. Forward and backward passes run in `f32` with
/// `f64` master weights; deterministic for a fixed seed. The loss is taken
/// on the head output before the floor so floored targets still pull
/// predictions down to it.
pub fn train_ivnet(
    dataset: &Dataset,
    fno: Option<&FnoModel>,
    spec: &IvTrainSpec,
    on_epoch: &mut dyn FnMut(&IvEpochRecord),
) -> Result<IvRun> {
    spec.validate()?;
    let m = &dataset.manifest;
    let v_g = m.oracle_config.vg_grid();
    if v_g.len() != spec.ivnet.n_vg {
        return Err(Error::Config(format!(
            "IV-Net emits {} points but the dataset gate grid has {}",
            spec.ivnet.n_vg,
            v_g.len()
        )));
    }
    let examples = iv_examples(dataset, Split::Seen, spec.map_source, fno)?;
    if examples.is_empty() {
        return Err(Error::Config("no seen samples to train on".into()));
    }
    let n_vg = spec.ivnet.n_vg;
    let targets: Vec<&[f64]> = examples.iter().map(|e| e.target.as_slice()).collect();
    let output = OutputScale::from_targets(&targets, n_vg, m.oracle_config.log10_i_floor)?;
    let fno_sha = match (spec.map_source, fno) {
        (MapSource::Fno, Some(f)) => Some(sha256_hex(&f.to_checkpoint()?.to_bytes()?)),
        _ => None,
    };
    let mut meta = IvNetMeta {
        kind: IVNET_KIND.into(),
        ivnet: spec.ivnet.clone(),
        optim: spec.optim.clone(),
        batch_size: spec.batch_size,
        seed: spec.seed,
        map_source: spec.map_source,
        stats: dataset.norm_stats()?.clone(),
        output,
        v_g,
        i_crit: m.oracle_config.i_at_vth,
        dataset_hash: m.config_hash.clone(),
        fno_checkpoint_sha256: fno_sha,
        epochs_completed: 0,
    };

    let (nx, ny) = (m.grid.nx, m.grid.ny);
    let per = MAP_CHANNELS * nx * ny;
    let mut master = init_ivnet(&spec.ivnet, spec.seed)?;
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1f_5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let per_epoch = examples.len().div_ceil(spec.batch_size);
    let total_steps = per_epoch * spec.optim.epochs;
    let mut history = Vec::with_capacity(spec.optim.epochs);
    let mut step = 0;
    for epoch in 0..spec.optim.epochs {
        order.shuffle(&mut rng);
        let lr_first = spec.optim.lr_at(step, total_steps);
        let mut sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let b = chunk.len();
            let mut maps = Vec::with_capacity(b * per);
            let mut scalars = Vec::with_capacity(b * N_SCALARS);
            let mut target = Vec::with_capacity(b * n_vg);
            for &i in chunk {
                let e = &examples[i];
                maps.extend(e.maps.iter().map(|&v| v as f32));
                scalars.extend(e.scalars.iter().map(|&v| v as f32));
                target.extend(e.target.iter().map(|&v| v as f32));
            }
            let params = master.cast::<f32>();
            let (loss, grads) = {
                let mut g = Graph::new(&params);
                let mv = g.input(Tensor::from_vec(&[b, MAP_CHANNELS, nx, ny], maps));
                let sv = g.input(Tensor::from_vec(&[b, N_SCALARS], scalars));
                let tv = g.input(Tensor::from_vec(&[b, n_vg], target));
                let out = ivnet_forward(&mut g, mv, sv, &spec.ivnet, &meta.output)?;
                let d = g.sub(out.raw, tv);
                let d2 = g.square(d);
                let l = g.mean_all(d2);
                let loss = g.scalar(l) as f64;
                if !loss.is_finite() {
                    return Err(diverged(epoch, format!("non-finite loss {loss}"), &master, &meta));
                }
                (loss, g.backward(l)?)
            };
            let snapshot = master.clone();
            adam.step(&mut master, &grads, spec.optim.lr_at(step, total_steps), &spec.optim);
            if !master.is_finite() {
                return Err(diverged(epoch, "non-finite weights after update".into(), &snapshot, &meta));
            }
            step += 1;
            sum += loss * b as f64;
        }
        let rec = IvEpochRecord {
            epoch,
            lr: lr_first,
            loss: sum / examples.len() as f64,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    meta.epochs_completed = spec.optim.epochs;
    Ok(IvRun {
        model: IvNetModel {
            meta,
            params: master.cast::<f32>(),
        },
        history,
    })
}

fn diverged(epoch: usize, reason: String, last_good: &crate::numerics::ParamStore<f64>, meta: &IvNetMeta) -> Error {
    let bytes = Checkpoint::new(last_good.cast::<f32>(), meta)
        .and_then(|c| c.to_bytes())
        .unwrap_or_default();
    Error::Diverged {
        epoch,
        reason,
        last_good: Box::new(bytes),
    }
}
