//! Trajectory-grouped batches for training and evaluation.

use std::ops::Range;

use super::manifest::Dataset;
use crate::error::Result;
use crate::oracle::{DeviceParams, Masks};

#[derive(Debug, Clone)]
pub struct BatchSample {
    /// Index into the manifest sample table.
    pub index: usize,
    pub params: DeviceParams,
    /// Normalized `(t_hzo, temp, s(tau))`.
    pub scalars: [f64; 3],
    /// Five normalized planes back to back.
    pub maps: Vec<f64>,
    pub masks: Masks,
}

#[derive(Debug, Clone)]
pub struct TrajectoryGroup {
    pub id: String,
    /// Positions of this trajectory's samples in [`TrajectoryBatch::samples`].
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub samples: Vec<BatchSample>,
    pub groups: Vec<TrajectoryGroup>,
}

/// Loads whole trajectories, each sorted by ascending retention time, with
/// normalization applied.
pub fn load_trajectory_batch(dataset: &Dataset, ids: &[&str]) -> Result<TrajectoryBatch> {
    let stats = dataset.norm_stats()?;
    let mut samples = Vec::new();
    let mut groups = Vec::with_capacity(ids.len());
    for id in ids {
        let traj = dataset.trajectory(id)?;
        let start = samples.len();
        for &i in &traj.samples {
            let bundle = dataset.load_bundle(i)?;
            let mut maps: Vec<f64> = bundle.channels().iter().flat_map(|f| f.values.iter().copied()).collect();
            stats.normalize(&mut maps, &bundle.masks.stack);
            let params = dataset.manifest.samples[i].params;
            samples.push(BatchSample {
                index: i,
                params,
                scalars: stats.embed(&params)?,
                maps,
                masks: bundle.masks,
            });
        }
        groups.push(TrajectoryGroup {
            id: id.to_string(),
            range: start..samples.len(),
        });
    }
    Ok(TrajectoryBatch { samples, groups })
}
