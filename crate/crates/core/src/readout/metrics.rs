//! Seen / holdout evaluation of a trained pipeline against the oracle.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predict::Predictor;
use crate::dataset::{Dataset, Split, TrajectoryInfo, J_CHANNEL};
use crate::error::{Error, Result};
use crate::oracle::{compute_aggregates, Aggregates, DeviceParams, CHANNEL_NAMES};
use crate::surrogate::count_mono_violations;

/// Rise in `P̄` or `Q̄` (relative to the reference scale) that counts as a
/// monotonicity violation.
pub const MONO_REL_TOL: f64 = 1e-3;
/// Drop in log10 I_D between adjacent gate points that counts as a ripple.
pub const IV_MONO_TOL: f64 = 1e-6;

/// `1 - SS_res / SS_tot` about the mean of `truth`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Adjacent gate points where the floored curve drops.
pub fn iv_mono_violations(log10_id: &[f64]) -> usize {
    log10_id.windows(2).filter(|w| w[1] < w[0] - IV_MONO_TOL).count()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub trajectory: String,
    pub split: Split,
    pub params: DeviceParams,
    pub vth_true: f64,
    pub vth_pred: Option<f64>,
    pub phi_base_pred: f64,
    pub iv_rmse: f64,
    pub iv_mono_violations: usize,
    pub latency_ms: f64,
}

/// One point of a retention curve, thresholds relative to the trajectory's
/// own `tau = 0` sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trajectory: String,
    pub split: Split,
    pub t_hzo: f64,
    pub temp: f64,
    pub tau: f64,
    pub dvth_true: f64,
    pub dvth_pred: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelError {
    pub channel: String,
    /// Masked RMSE over the set divided by the range of the true values.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub samples: usize,
    pub vth_r2: f64,
    pub vth_rmse_v: f64,
    pub vth_median_abs_err_v: f64,
    /// Samples whose predicted curve never crosses the criterion.
    pub vth_failures: usize,
    /// RMSE of floored log10 I_D, decades.
    pub iv_rmse: f64,
    pub channels: Vec<ChannelError>,
    pub iv_mono_violations: usize,
    /// Consecutive-pair rises of predicted `P̄` / `Q̄` within trajectories.
    pub aggregate_mono_violations: usize,
    /// Pearson correlation of predicted V_th with the predicted potential
    /// at the base of the stack.
    pub vth_phi_pearson: f64,
}

impl SplitMetrics {
    pub fn max_channel_rel_err(&self) -> f64 {
        self.channels.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceStats {
    pub predictions: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seen: SplitMetrics,
    pub holdout: Option<SplitMetrics>,
    pub inference: InferenceStats,
    pub samples: Vec<SampleEval>,
    pub curves: Vec<CurvePoint>,
}

/// Per-trajectory results before reduction.
struct TrajEval {
    samples: Vec<SampleEval>,
    curves: Vec<CurvePoint>,
    /// Per channel: sum of squared error, masked cell count, true min, true max.
    channel_acc: [(f64, usize, f64, f64); 5],
    aggregate_violations: usize,
}

fn eval_trajectory(dataset: &Dataset, predictor: &Predictor, traj: &TrajectoryInfo) -> Result<TrajEval> {
    let m = &dataset.manifest;
    let params: Vec<DeviceParams> = traj.samples.iter().map(|&i| m.samples[i].params).collect();
    let preds = predictor.predict_batch(&params)?;
    let geo = predictor.geometry(traj.t_hzo)?;
    let mut channel_acc = [(0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY); 5];
    let mut samples = Vec::with_capacity(preds.len());
    let mut aggs: Vec<Aggregates> = Vec::with_capacity(preds.len());
    for (&i, p) in traj.samples.iter().zip(&preds) {
        let rec = &m.samples[i];
        let truth = dataset.load_bundle(i)?;
        for (c, (tc, pc)) in truth.channels().iter().zip(p.maps.channels()).enumerate() {
            let acc = &mut channel_acc[c];
            for (k, (&t, &q)) in tc.values.iter().zip(&pc.values).enumerate() {
                if c == J_CHANNEL || geo.masks.stack[k] == 1 {
                    acc.0 += (q - t).powi(2);
                    acc.1 += 1;
                    acc.2 = acc.2.min(t);
                    acc.3 = acc.3.max(t);
                }
            }
        }
        aggs.push(compute_aggregates(&p.maps.p_y.values, &p.maps.n_t.values, &p.maps.p_t.values, &geo));
        let n = rec.iv.log10_id.len() as f64;
        let floor = m.oracle_config.log10_i_floor;
        let iv_rmse = (rec
            .iv
            .log10_id
            .iter()
            .zip(&p.iv.log10_id)
            .map(|(t, q)| (t.max(floor) - q).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        samples.push(SampleEval {
            id: rec.id.clone(),
            trajectory: rec.trajectory.clone(),
            split: rec.split,
            params: rec.params,
            vth_true: rec.vth,
            vth_pred: p.vth,
            phi_base_pred: p.phi_base,
            iv_rmse,
            iv_mono_violations: iv_mono_violations(&p.iv.log10_id),
            latency_ms: p.latency.as_secs_f64() * 1e3,
        });
    }
    let mut curves = Vec::new();
    if let Some(b) = samples.iter().position(|s| s.params.tau == 0.0) {
        let (t0, p0) = (samples[b].vth_true, samples[b].vth_pred);
        for s in &samples {
            curves.push(CurvePoint {
                trajectory: traj.id.clone(),
                split: traj.split,
                t_hzo: traj.t_hzo,
                temp: traj.temp,
                tau: s.params.tau,
                dvth_true: s.vth_true - t0,
                dvth_pred: p0.zip(s.vth_pred).map(|(a, b)| b - a),
            });
        }
    }
    Ok(TrajEval {
        aggregate_violations: count_mono_violations(&aggs, &predictor.fno.meta.scales, MONO_REL_TOL),
        samples,
        curves,
        channel_acc,
    })
}

fn reduce(evals: &[&TrajEval]) -> Option<SplitMetrics> {
    let samples: Vec<&SampleEval> = evals.iter().flat_map(|e| e.samples.iter()).collect();
    if samples.is_empty() {
        return None;
    }
    let ok: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter_map(|s| s.vth_pred.map(|p| (s.vth_true, p, s.phi_base_pred)))
        .collect();
    let truth: Vec<f64> = ok.iter().map(|v| v.0).collect();
    let pred: Vec<f64> = ok.iter().map(|v| v.1).collect();
    let phi: Vec<f64> = ok.iter().map(|v| v.2).collect();
    let errs: Vec<f64> = ok.iter().map(|v| (v.1 - v.0).abs()).collect();
    let mut channels = Vec::with_capacity(5);
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        let (mut ss, mut count, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
        for e in evals {
            let a = e.channel_acc[c];
            ss += a.0;
            count += a.1;
            lo = lo.min(a.2);
            hi = hi.max(a.3);
        }
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        channels.push(ChannelError {
            channel: name.to_string(),
            rel_err: (ss / count.max(1) as f64).sqrt() / range,
        });
    }
    let n = samples.len() as f64;
    Some(SplitMetrics {
        samples: samples.len(),
        vth_r2: if ok.len() >= 2 { r_squared(&truth, &pred) } else { f64::NAN },
        vth_rmse_v: (errs.iter().map(|e| e * e).sum::<f64>() / errs.len().max(1) as f64).sqrt(),
        vth_median_abs_err_v: median(errs),
        vth_failures: samples.len() - ok.len(),
        iv_rmse: (samples.iter().map(|s| s.iv_rmse.powi(2)).sum::<f64>() / n).sqrt(),
        channels,
        iv_mono_violations: samples.iter().map(|s| s.iv_mono_violations).sum(),
        aggregate_mono_violations: evals.iter().map(|e| e.aggregate_violations).sum(),
        vth_phi_pearson: if ok.len() >= 2 { pearson(&pred, &phi) } else { f64::NAN },
    })
}

/// Evaluates every trajectory of the dataset, in parallel across
/// trajectories. The predictor must run at the dataset grid.
pub fn evaluate(dataset: &Dataset, predictor: &Predictor) -> Result<MetricsReport> {
    let m = &dataset.manifest;
    if predictor.grid != m.grid {
        return Err(Error::Config("evaluation needs predictions at the dataset grid".into()));
    }
    let trajs = m.trajectories();
    let evals = trajs
        .par_iter()
        .map(|t| eval_trajectory(dataset, predictor, t))
        .collect::<Result<Vec<_>>>()?;
    let pick = |split: Split| -> Vec<&TrajEval> {
        trajs.iter().zip(&evals).filter(|(t, _)| t.split == split).map(|(_, e)| e).collect()
    };
    let seen = reduce(&pick(Split::Seen)).ok_or_else(|| Error::Config("dataset has no seen samples".into()))?;
    let holdout = reduce(&pick(Split::Holdout));
    let samples: Vec<SampleEval> = evals.iter().flat_map(|e| e.samples.iter().cloned()).collect();
    let lat: Vec<f64> = samples.iter().map(|s| s.latency_ms).collect();
    Ok(MetricsReport {
        seen,
        holdout,
        inference: InferenceStats {
            predictions: lat.len(),
            mean_ms: lat.iter().sum::<f64>() / lat.len().max(1) as f64,
            max_ms: lat.iter().copied().fold(0.0, f64::max),
        },
        curves: evals.iter().flat_map(|e| e.curves.iter().cloned()).collect(),
        samples,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

impl MetricsReport {
    /// `id,trajectory,split,t_hzo_nm,temp_k,tau_s,vth_true_v,vth_pred_v,phi_base_pred_v,iv_rmse_dec,iv_mono_violations,latency_ms`;
    /// `vth_pred_v` is empty when extraction failed.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "id,trajectory,split,t_hzo_nm,temp_k,tau_s,vth_true_v,vth_pred_v,phi_base_pred_v,iv_rmse_dec,iv_mono_violations,latency_ms"
        )
        .map_err(io)?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.9},{},{:.9},{:.6},{},{:.3}",
                s.id,
                s.trajectory,
                split_name(s.split),
                s.params.t_hzo,
                s.params.temp,
                s.params.tau,
                s.vth_true,
                opt(s.vth_pred),
                s.phi_base_pred,
                s.iv_rmse,
                s.iv_mono_violations,
                s.latency_ms
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// `trajectory,split,t_hzo_nm,temp_k,tau_s,dvth_true_v,dvth_pred_v`.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let io = |e| Error::io(path, e);
        writeln!(w, "trajectory,split,t_hzo_nm,temp_k,tau_s,dvth_true_v,dvth_pred_v").map_err(io)?;
        for c in &self.curves {
            writeln!(
                w,
                "{},{},{},{},{},{:.9},{}",
                c.trajectory,
                split_name(c.split),
                c.t_hzo,
                c.temp,
                c.tau,
                c.dvth_true,
                opt(c.dvth_pred)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Seen => "seen",
        Split::Holdout => "holdout",
    }
}
