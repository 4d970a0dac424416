//! Trained IV-Net bundle.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{IvNetConfig, MapSource, MAP_CHANNELS, N_SCALARS};
use super::ivnet::{ivnet_forward, OutputScale};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::numerics::graph::Graph;
use crate::numerics::tensor::{ParamStore, Tensor};
use crate::surrogate::{Checkpoint, OptimConfig};

pub const IVNET_KIND: &str = "ivnet";

/// JSON blob stored in IV-Net checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvNetMeta {
    pub kind: String,
    pub ivnet: IvNetConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub map_source: MapSource,
    pub stats: NormStats,
    pub output: OutputScale,
    pub v_g: Vec<f64>,
    /// Constant-current threshold criterion, A.
    pub i_crit: f64,
    pub dataset_hash: String,
    /// SHA-256 of the FNO checkpoint the training maps came from.
    pub fno_checkpoint_sha256: Option<String>,
    pub epochs_completed: usize,
}

#[derive(Debug, Clone)]
pub struct IvNetModel {
    pub meta: IvNetMeta,
    pub params: ParamStore<f32>,
}

impl IvNetModel {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let kind = ckpt.kind()?;
        if kind != IVNET_KIND {
            return Err(Error::Format(format!("checkpoint holds a {kind:?} model, expected {IVNET_KIND:?}")));
        }
        let meta: IvNetMeta = ckpt.config()?;
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

    /// Floored log10 I_D on the model's gate grid for each `(maps, scalars)`
    /// pair; maps are normalized, five planes of `nx x ny` back to back.
    pub fn predict(&self, maps: &[&[f64]], scalars: &[[f64; 3]], nx: usize, ny: usize) -> Result<Vec<Vec<f64>>> {
        if maps.len() != scalars.len() {
            return Err(Error::Usage("one scalar triple per map stack".into()));
        }
        if maps.is_empty() {
            return Ok(Vec::new());
        }
        let per = MAP_CHANNELS * nx * ny;
        let mut m = Vec::with_capacity(maps.len() * per);
        for x in maps {
            if x.len() != per {
                return Err(Error::Usage(format!("map stack has {} values, expected {per}", x.len())));
            }
            m.extend(x.iter().map(|&v| v as f32));
        }
        let s: Vec<f32> = scalars.iter().flat_map(|s| s.iter().map(|&v| v as f32)).collect();
        let mut g = Graph::new(&self.params);
        let mv = g.input(Tensor::from_vec(&[maps.len(), MAP_CHANNELS, nx, ny], m));
        let sv = g.input(Tensor::from_vec(&[scalars.len(), N_SCALARS], s));
        let out = ivnet_forward(&mut g, mv, sv, &self.meta.ivnet, &self.meta.output)?;
        let n = self.meta.ivnet.n_vg;
        Ok(g.value(out.floored).data.chunks(n).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
    }
}
