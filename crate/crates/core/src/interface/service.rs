//! Model-side request handling, independent of the HTTP framework.

use std::collections::BTreeMap;
use std::path::Path;

use super::api::*;
use super::pool::mean_pool;
use crate::error::{Error, Result};
use crate::oracle::config::{T_HZO_RANGE, TAU_RANGE, TEMP_RANGE};
use crate::oracle::{DeviceParams, CHANNEL_NAMES};
use crate::readout::{IvNetModel, Predictor};
use crate::surrogate::FnoModel;

/// Longest accepted retention grid.
pub const MAX_TAU_GRID: usize = 1024;

/// Loaded models plus precomputed metadata; immutable after construction.
#[derive(Debug)]
pub struct ServiceState {
    pub predictor: Predictor,
    meta: MetaResponse,
}

/// HTTP status and error class for a model-side failure.
pub fn error_status(err: &Error) -> (u16, &'static str) {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Geometry(_) => (400, "bad_request"),
        Error::Extraction(_) => (422, "extraction"),
        _ => (500, "internal"),
    }
}

fn range((min, max): (f64, f64)) -> Range {
    Range { min, max }
}

impl ServiceState {
    pub fn new(predictor: Predictor) -> Self {
        let m = &predictor.ivnet.meta;
        let meta = MetaResponse {
            schema_version: SCHEMA_VERSION,
            ranges: SliderRanges {
                t_hzo_nm: range(T_HZO_RANGE),
                temp_k: range(TEMP_RANGE),
                tau_s: range(TAU_RANGE),
            },
            vg: m.v_g.clone(),
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            nx: predictor.grid.nx,
            ny: predictor.grid.ny,
            i_crit: m.i_crit,
            fno_physics_informed: predictor.fno.meta.loss_weights.is_physics_informed(),
        };
        Self { predictor, meta }
    }

    pub fn load(fno: &Path, ivnet: &Path) -> Result<Self> {
        Ok(Self::new(Predictor::new(FnoModel::load(fno)?, IvNetModel::load(ivnet)?)?))
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse {
            schema_version: SCHEMA_VERSION,
            status: "ok".into(),
        }
    }

    pub fn meta(&self) -> MetaResponse {
        self.meta.clone()
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        let params = DeviceParams::new(req.t_hzo_nm, req.temp_k, req.tau_s);
        let p = self.predictor.predict_batch(&[params])?.pop().expect("one prediction");
        let vth_v = p.vth()?;
        let maps = req.include_maps.then(|| {
            let g = p.maps.grid();
            CHANNEL_NAMES
                .iter()
                .zip(p.maps.channels())
                .map(|(name, f)| (name.to_string(), mean_pool(&f.values, g.nx, g.ny, MAX_MAP_SIDE)))
                .collect::<BTreeMap<_, _>>()
        });
        Ok(PredictResponse {
            schema_version: SCHEMA_VERSION,
            vth_v,
            vg: p.iv.v_g,
            id_log10: p.iv.log10_id,
            latency_ms: p.latency.as_secs_f64() * 1e3,
            maps,
            extrapolated: p.extrapolated,
        })
    }

    pub fn retention(&self, req: &RetentionRequest) -> Result<RetentionResponse> {
        if req.tau_grid.is_empty() || req.tau_grid.len() > MAX_TAU_GRID {
            return Err(Error::Usage(format!("tau_grid must hold 1..={MAX_TAU_GRID} values")));
        }
        let dvth_v = self.predictor.retention(req.t_hzo_nm, req.temp_k, &req.tau_grid)?;
        Ok(RetentionResponse {
            schema_version: SCHEMA_VERSION,
            tau: req.tau_grid.clone(),
            dvth_v,
        })
    }
}
