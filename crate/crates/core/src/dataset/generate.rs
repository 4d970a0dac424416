//! Parallel sweep generation.

use std::path::Path;

use rayon::prelude::*;

use super::container::FefFile;
use super::manifest::{
    config_hash, trajectory_id, Dataset, FailureRecord, Manifest, SampleRecord, Split, SweepSpec, MANIFEST_VERSION,
};
use super::norm::NormStats;
use crate::error::{Error, Result};
use crate::numerics::grid::GridSpec;
use crate::oracle::{simulate, DeviceParams, OracleConfig};

pub const FIELDS_DIR: &str = "fields";

struct Job<'a> {
    index: usize,
    spec: &'a SweepSpec,
    t_hzo: f64,
    temp: f64,
}

fn run_job(job: &Job, grid: &GridSpec, config: &OracleConfig, out: &Path) -> Result<Vec<SampleRecord>> {
    let traj = simulate(job.t_hzo, job.temp, grid, config, &job.spec.taus)?;
    let trajectory = trajectory_id(&job.spec.name, job.t_hzo, job.temp);
    let mut records = Vec::with_capacity(traj.snapshots.len());
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let file = format!("{FIELDS_DIR}/j{:03}-{k}.fef", job.index);
        FefFile::from_bundle(&snap.bundle).write(&out.join(&file))?;
        records.push(SampleRecord {
            id: format!("{trajectory}/tau{}", snap.tau),
            trajectory: trajectory.clone(),
            params: DeviceParams::new(job.t_hzo, job.temp, snap.tau),
            split: job.spec.split,
            file,
            iv: snap.iv.clone(),
            vth: snap.vth,
            vth_internal: snap.vth_internal,
            phi_s: snap.phi_s,
            aggregates: snap.aggregates,
            residual: snap.residual,
        });
    }
    Ok(records)
}

/// Simulates every (t_hzo, temp) pair of every spec and writes field files
/// plus `manifest.json` into `out`. Failed trajectories are recorded in the
/// manifest and generation continues.
pub fn generate_sweep(
    grid: &GridSpec,
    config: &OracleConfig,
    specs: &[SweepSpec],
    out: &Path,
    workers: usize,
) -> Result<Dataset> {
    grid.validate()?;
    config.validate()?;
    let fields = out.join(FIELDS_DIR);
    std::fs::create_dir_all(&fields).map_err(|e| Error::io(&fields, e))?;

    let mut jobs = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for spec in specs {
        if spec.taus.is_empty() {
            return Err(Error::Usage(format!("sweep {} has no retention times", spec.name)));
        }
        for &t_hzo in &spec.t_hzo {
            for &temp in &spec.temp {
                if !ids.insert(trajectory_id(&spec.name, t_hzo, temp)) {
                    return Err(Error::Usage(format!("duplicate trajectory {}", trajectory_id(&spec.name, t_hzo, temp))));
                }
                jobs.push(Job {
                    index: jobs.len(),
                    spec,
                    t_hzo,
                    temp,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Vec<SampleRecord>>> =
        pool.install(|| jobs.par_iter().map(|j| run_job(j, grid, config, out)).collect());

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(records) => samples.extend(records),
            // Filesystem trouble is not a per-sample oracle failure.
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => failures.push(FailureRecord {
                trajectory: trajectory_id(&job.spec.name, job.t_hzo, job.temp),
                t_hzo: job.t_hzo,
                temp: job.temp,
                error: e.to_string(),
            }),
        }
    }

    let mut dataset = Dataset {
        root: out.to_path_buf(),
        manifest: Manifest {
            format_version: MANIFEST_VERSION,
            grid: *grid,
            oracle_config: config.clone(),
            config_hash: config_hash(grid, config),
            specs: specs.to_vec(),
            samples,
            failures,
            norm_stats: None,
        },
    };
    dataset.manifest.norm_stats = seen_norm_stats(&dataset).ok();
    dataset.save_manifest()?;
    Ok(dataset)
}

/// Normalization statistics over the seen split, read back from the stored
/// containers so they describe exactly what the loader returns.
pub fn seen_norm_stats(dataset: &Dataset) -> Result<NormStats> {
    let seen = dataset.manifest.sample_indices(Split::Seen);
    let mut owned = Vec::with_capacity(seen.len());
    for &i in &seen {
        let b = dataset.load_bundle(i)?;
        let maps: Vec<f64> = b.channels().iter().flat_map(|f| f.values.iter().copied()).collect();
        owned.push((dataset.manifest.samples[i].params, maps, b.masks.stack));
    }
    let view: Vec<(DeviceParams, &[f64], &[u8])> =
        owned.iter().map(|(p, m, s)| (*p, m.as_slice(), s.as_slice())).collect();
    NormStats::compute(&view)
}
