//! Trained FNO bundle: weights plus everything needed to run inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{FnoConfig, LossWeights, OptimConfig, N_INPUTS};
use super::fno::{fno_forward, fno_plan, lift_inputs};
use super::loss::PhysicsScales;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::numerics::graph::Graph;
use crate::numerics::grid::{Field2D, GridSpec, Unit};
use crate::numerics::tensor::{ParamStore, Tensor};
use crate::oracle::{build_geometry, DeviceParams, FieldBundle, Geometry, OracleConfig};

pub const FNO_KIND: &str = "fno";

/// JSON blob stored in FNO checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoMeta {
    pub kind: String,
    pub fno: FnoConfig,
    pub loss_weights: LossWeights,
    pub optim: OptimConfig,
    pub seed: u64,
    pub stats: NormStats,
    pub scales: PhysicsScales,
    /// Grid of the training data.
    pub grid: GridSpec,
    pub oracle_config: OracleConfig,
    pub dataset_hash: String,
    pub epochs_completed: usize,
}

#[derive(Debug, Clone)]
pub struct FnoModel {
    pub meta: FnoMeta,
    pub params: ParamStore<f32>,
}

impl FnoModel {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let kind = ckpt.kind()?;
        if kind != FNO_KIND {
            return Err(Error::Format(format!("checkpoint holds a {kind:?} model, expected {FNO_KIND:?}")));
        }
        let meta: FnoMeta = ckpt.config()?;
        Ok(Self {
            meta,
            params: ckpt.params,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(self.params.clone(), &self.meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    /// Training grid rescaled to `n x n` cells over the same domain.
    pub fn grid_at(&self, n: usize) -> GridSpec {
        GridSpec {
            nx: n,
            ny: n,
            dx: self.meta.grid.width_nm() / n as f64,
            dy: self.meta.grid.height_nm() / n as f64,
            sd_extent: self.meta.grid.sd_extent,
        }
    }

    pub fn geometry(&self, t_hzo: f64, grid: &GridSpec) -> Result<Geometry> {
        build_geometry(t_hzo, &self.meta.oracle_config, grid)
    }

    /// Normalized maps, five planes back to back per device.
    pub fn predict_normalized(&self, devices: &[(DeviceParams, &Geometry)]) -> Result<Vec<Vec<f64>>> {
        let Some((_, first)) = devices.first() else {
            return Ok(Vec::new());
        };
        let grid = first.grid;
        let (nx, ny) = (grid.nx, grid.ny);
        let plan = fno_plan::<f32>(&self.meta.fno, nx, ny)?;
        let mut data = Vec::with_capacity(devices.len() * N_INPUTS * nx * ny);
        for (p, geo) in devices {
            if geo.grid != grid {
                return Err(Error::Usage("all devices in one prediction must share a grid".into()));
            }
            let s = self.meta.stats.embed(p)?;
            data.extend(lift_inputs(&s, nx, ny, &geo.masks).into_iter().map(|v| v as f32));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_vec(&[devices.len(), N_INPUTS, nx, ny], data));
        let y = fno_forward(&mut g, x, &self.meta.fno, &plan)?;
        let out = g.value(y);
        let per = 5 * nx * ny;
        Ok(out.data.chunks(per).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
    }

    /// Physical maps for one device, masked like oracle bundles.
    pub fn predict_bundle(&self, params: &DeviceParams, geometry: &Geometry) -> Result<FieldBundle> {
        let mut maps = self.predict_normalized(&[(*params, geometry)])?.pop().unwrap();
        self.meta.stats.denormalize(&mut maps, &geometry.masks.stack);
        bundle_from_maps(maps, geometry)
    }
}

/// Wraps five physical planes into a bundle on `geometry`.
pub fn bundle_from_maps(maps: Vec<f64>, geometry: &Geometry) -> Result<FieldBundle> {
    let g = geometry.grid;
    let n = g.len();
    let units = [
        Unit::Volt,
        Unit::CoulombPerM2,
        Unit::CoulombPerM3,
        Unit::CoulombPerM3,
        Unit::Log10AmperePerM2,
    ];
    let channels = maps
        .chunks(n)
        .zip(units)
        .map(|(c, u)| Field2D::from_values(g, u, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    FieldBundle::from_channels(channels, geometry.masks.clone())
}
