//! End-to-end inference: scalars -> FNO maps -> IV-Net curve -> threshold.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use super::model::IvNetModel;
use crate::error::{Error, Result};
use crate::numerics::grid::{Field2D, GridSpec};
use crate::oracle::{extract_vth, DeviceParams, FieldBundle, Geometry, IvCurve};
use crate::surrogate::{bundle_from_maps, FnoModel};

/// Lateral mean potential on the lowest stack row, the predicted
/// counterpart of the oracle's channel-surface potential.
pub fn stack_base_potential(phi: &Field2D, geometry: &Geometry) -> f64 {
    let g = &geometry.grid;
    let row = geometry.rows.stack().start;
    (0..g.nx).map(|ix| phi.at(ix, row)).sum::<f64>() / g.nx as f64
}

/// Devices per forward pass; bounds graph memory.
pub const BATCH: usize = 16;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub params: DeviceParams,
    pub extrapolated: bool,
    pub iv: IvCurve,
    /// Constant-current threshold, absent when the curve never crosses it.
    pub vth: Option<f64>,
    pub vth_error: Option<String>,
    /// See [`stack_base_potential`].
    pub phi_base: f64,
    /// Physical maps on the prediction grid.
    pub maps: FieldBundle,
    /// Normalized maps as produced by the FNO.
    pub normalized: Vec<f64>,
    /// Wall-clock time attributed to this prediction.
    pub latency: Duration,
}

impl Prediction {
    pub fn vth(&self) -> Result<f64> {
        self.vth
            .ok_or_else(|| Error::Extraction(self.vth_error.clone().unwrap_or_else(|| "no crossing".into())))
    }
}

/// Loaded FNO + IV-Net pair. Read-only after construction, so one instance
/// can serve concurrent requests.
#[derive(Debug)]
pub struct Predictor {
    pub fno: FnoModel,
    pub ivnet: IvNetModel,
    pub grid: GridSpec,
    geometries: RwLock<HashMap<u64, Arc<Geometry>>>,
}

impl Predictor {
    /// Predicts at the FNO's training grid.
    pub fn new(fno: FnoModel, ivnet: IvNetModel) -> Result<Self> {
        let grid = fno.meta.grid;
        Self::with_grid(fno, ivnet, grid)
    }

    pub fn with_grid(fno: FnoModel, ivnet: IvNetModel, grid: GridSpec) -> Result<Self> {
        fno.meta.fno.check_grid(grid.nx, grid.ny)?;
        if ivnet.meta.dataset_hash != fno.meta.dataset_hash {
            return Err(Error::Config(format!(
                "IV-Net (dataset {}) and FNO (dataset {}) were trained on different datasets",
                ivnet.meta.dataset_hash, fno.meta.dataset_hash
            )));
        }
        if ivnet.meta.v_g.len() != ivnet.meta.ivnet.n_vg {
            return Err(Error::Format("IV-Net gate grid does not match its output size".into()));
        }
        Ok(Self {
            fno,
            ivnet,
            grid,
            geometries: RwLock::new(HashMap::new()),
        })
    }

    pub fn geometry(&self, t_hzo: f64) -> Result<Arc<Geometry>> {
        if let Some(g) = self.geometries.read().unwrap().get(&t_hzo.to_bits()) {
            return Ok(g.clone());
        }
        let g = Arc::new(self.fno.geometry(t_hzo, &self.grid)?);
        self.geometries.write().unwrap().insert(t_hzo.to_bits(), g.clone());
        Ok(g)
    }

    /// Single prediction; threshold extraction failure is an error.
    pub fn predict(&self, params: &DeviceParams) -> Result<Prediction> {
        let p = self.predict_batch(std::slice::from_ref(params))?.pop().unwrap();
        p.vth()?;
        Ok(p)
    }

    /// Batched inference in chunks of [`BATCH`]; latency is each chunk's
    /// time split evenly.
    pub fn predict_batch(&self, params: &[DeviceParams]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(params.len());
        for chunk in params.chunks(BATCH) {
            out.extend(self.predict_chunk(chunk)?);
        }
        Ok(out)
    }

    fn predict_chunk(&self, params: &[DeviceParams]) -> Result<Vec<Prediction>> {
        let start = Instant::now();
        for p in params {
            p.validate(true)?;
        }
        let geos = params.iter().map(|p| self.geometry(p.t_hzo)).collect::<Result<Vec<_>>>()?;
        let devices: Vec<(DeviceParams, &Geometry)> = params.iter().zip(&geos).map(|(p, g)| (*p, &**g)).collect();
        // One device per FNO pass: batched activations overflow the cache
        // at 64x64 and run slower per sample.
        let mut normalized = Vec::with_capacity(devices.len());
        for d in &devices {
            normalized.extend(self.fno.predict_normalized(std::slice::from_ref(d))?);
        }
        let stats = &self.ivnet.meta.stats;
        let scalars = params.iter().map(|p| stats.embed(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = normalized.iter().map(|v| v.as_slice()).collect();
        let curves = self.ivnet.predict(&refs, &scalars, self.grid.nx, self.grid.ny)?;
        let meta = &self.ivnet.meta;
        let mut out = Vec::with_capacity(params.len());
        for ((p, geo), (norm, log10_id)) in params.iter().zip(&geos).zip(normalized.into_iter().zip(curves)) {
            let mut phys = norm.clone();
            self.fno.meta.stats.denormalize(&mut phys, &geo.masks.stack);
            let maps = bundle_from_maps(phys, geo)?;
            let iv = IvCurve {
                v_g: meta.v_g.clone(),
                log10_id,
            };
            let (vth, vth_error) = match extract_vth(&iv, meta.i_crit, meta.output.floor) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(Prediction {
                params: *p,
                extrapolated: p.is_extrapolated(),
                phi_base: stack_base_potential(&maps.phi, geo),
                iv,
                vth,
                vth_error,
                maps,
                normalized: norm,
                latency: Duration::ZERO,
            });
        }
        let each = start.elapsed() / params.len().max(1) as u32;
        out.iter_mut().for_each(|p| p.latency = each);
        Ok(out)
    }

    /// `V_th(tau) - V_th(0)` for one device over `taus`.
    pub fn retention(&self, t_hzo: f64, temp: f64, taus: &[f64]) -> Result<Vec<f64>> {
        let mut params = vec![DeviceParams::new(t_hzo, temp, 0.0)];
        params.extend(taus.iter().map(|&tau| DeviceParams::new(t_hzo, temp, tau)));
        let preds = self.predict_batch(&params)?;
        let base = preds[0].vth()?;
        preds[1..].iter().map(|p| Ok(p.vth()? - base)).collect()
    }
}
