//! Continuous one-parameter sweeps through a trained pipeline.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predict::Predictor;
use crate::dataset::time_embed;
use crate::error::{Error, Result};
use crate::oracle::config::{TAU_RANGE, TEMP_RANGE, T_HZO_RANGE};
use crate::oracle::DeviceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    Tau,
    Temp,
    Thzo,
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepVar::Tau),
            "temp" => Ok(SweepVar::Temp),
            "thzo" => Ok(SweepVar::Thzo),
            other => Err(Error::Usage(format!("unknown sweep variable {other:?} (expected tau, temp or thzo)"))),
        }
    }
}

impl SweepVar {
    /// CSV column name.
    pub fn column(self) -> &'static str {
        match self {
            SweepVar::Tau => "tau_s",
            SweepVar::Temp => "temp_k",
            SweepVar::Thzo => "t_hzo_nm",
        }
    }

    /// Table I range of the variable.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            SweepVar::Tau => TAU_RANGE,
            SweepVar::Temp => TEMP_RANGE,
            SweepVar::Thzo => T_HZO_RANGE,
        }
    }

    /// `base` with this variable replaced by `v`.
    pub fn set(self, base: DeviceParams, v: f64) -> DeviceParams {
        match self {
            SweepVar::Tau => DeviceParams { tau: v, ..base },
            SweepVar::Temp => DeviceParams { temp: v, ..base },
            SweepVar::Thzo => DeviceParams { t_hzo: v, ..base },
        }
    }
}

/// Sample points from `from` to `to` inclusive. Retention times are spaced
/// uniformly in `log10(1 + tau)`, the other variables linearly.
pub fn sweep_points(vary: SweepVar, from: f64, to: f64, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::Usage(format!("a sweep needs at least 2 points, got {n_points}")));
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::Usage("sweep bounds must be finite".into()));
    }
    let lin = |a: f64, b: f64| (0..n_points).map(move |i| a + (b - a) * i as f64 / (n_points - 1) as f64);
    Ok(match vary {
        SweepVar::Tau => {
            let (a, b) = (time_embed(from)?, time_embed(to)?);
            let mut pts: Vec<f64> = lin(a, b).map(|s| 10f64.powf(s) - 1.0).collect();
            // Pin the ends so they reproduce the request exactly.
            pts[0] = from;
            pts[n_points - 1] = to;
            pts
        }
        _ => lin(from, to).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub vth_v: Option<f64>,
    pub extrapolated: bool,
}

/// Predicts V_th at every sweep point with the other inputs fixed.
pub fn run_sweep(
    predictor: &Predictor,
    vary: SweepVar,
    fixed: DeviceParams,
    from: f64,
    to: f64,
    n_points: usize,
) -> Result<Vec<SweepRow>> {
    let values = sweep_points(vary, from, to, n_points)?;
    let params: Vec<DeviceParams> = values.iter().map(|&v| vary.set(fixed, v)).collect();
    let preds = predictor.predict_batch(&params)?;
    Ok(values
        .into_iter()
        .zip(preds)
        .map(|(value, p)| SweepRow {
            value,
            vth_v: p.vth,
            extrapolated: p.extrapolated,
        })
        .collect())
}

/// Header `<column>,vth_v,extrapolated`; `vth_v` is empty where the curve
/// never reaches the criterion.
pub fn write_sweep_csv(rows: &[SweepRow], vary: SweepVar, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{},vth_v,extrapolated", vary.column())?;
    for r in rows {
        let vth = r.vth_v.map(|v| format!("{v:.9}")).unwrap_or_default();
        writeln!(out, "{},{},{}", r.value, vth, r.extrapolated)?;
    }
    Ok(())
}

pub fn export_sweep_csv(rows: &[SweepRow], vary: SweepVar, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_sweep_csv(rows, vary, &mut f).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}
