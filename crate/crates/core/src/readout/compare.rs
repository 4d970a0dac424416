//! Data-driven FNO versus physics-informed FNO over several seeds, with a
//! shared oracle-trained IV-Net for threshold-level metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{IvTrainSpec, MapSource};
use super::metrics::{MONO_REL_TOL, evaluate};
use super::model::IvNetModel;
use super::predict::Predictor;
use super::train::train_ivnet;
use crate::dataset::{load_trajectory_batch, Dataset, Split, J_CHANNEL};
use crate::error::{Error, Result};
use crate::oracle::{compute_aggregates, Aggregates, DeviceParams, IvCurve, TABLE_TAUS};
use crate::surrogate::{count_mono_violations, train_fno, FnoModel, FnoTrainSpec, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSpec {
    pub seeds: Vec<u64>,
    /// Architecture and optimizer shared by both arms; its loss weights and
    /// seed are overridden per arm.
    pub budget: FnoTrainSpec,
    pub baseline_weights: LossWeights,
    pub physics_weights: LossWeights,
    /// Shared readout, trained once on oracle maps (`map_source` is ignored).
    pub ivnet: IvTrainSpec,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            budget: FnoTrainSpec::default(),
            baseline_weights: LossWeights::data_only(),
            physics_weights: LossWeights::default(),
            ivnet: IvTrainSpec {
                map_source: MapSource::Oracle,
                ..IvTrainSpec::default()
            },
        }
    }
}

/// Holdout accuracy of one FNO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutScore {
    /// Masked RMSE in normalized map units, channels weighted equally.
    pub map_rmse: f64,
    pub aggregate_mono_violations: usize,
    pub samples: usize,
}

/// Scores an FNO on the holdout split in normalized space, masked the same
/// way as the data loss.
pub fn holdout_score(dataset: &Dataset, fno: &FnoModel) -> Result<HoldoutScore> {
    let m = &dataset.manifest;
    let mut ss = [0.0f64; 5];
    let mut count = [0usize; 5];
    let mut violations = 0;
    let mut samples = 0;
    let mut geos = crate::surrogate::train::GeometryCache::new(dataset);
    for traj in m.trajectories_in(Split::Holdout) {
        let batch = load_trajectory_batch(dataset, &[traj.id.as_str()])?;
        let geo = geos.get(traj.t_hzo)?;
        let devices: Vec<_> = batch.samples.iter().map(|s| (s.params, &*geo)).collect();
        let preds = fno.predict_normalized(&devices)?;
        let n = m.grid.len();
        let mut aggs: Vec<Aggregates> = Vec::with_capacity(preds.len());
        for (s, p) in batch.samples.iter().zip(&preds) {
            for c in 0..5 {
                for k in 0..n {
                    if c == J_CHANNEL || s.masks.stack[k] == 1 {
                        ss[c] += (p[c * n + k] - s.maps[c * n + k]).powi(2);
                        count[c] += 1;
                    }
                }
            }
            let mut phys = p.clone();
            fno.meta.stats.denormalize(&mut phys, &s.masks.stack);
            aggs.push(compute_aggregates(&phys[n..2 * n], &phys[2 * n..3 * n], &phys[3 * n..4 * n], &geo));
        }
        violations += count_mono_violations(&aggs, &fno.meta.scales, MONO_REL_TOL);
        samples += preds.len();
    }
    if samples == 0 {
        return Err(Error::Config("dataset has no holdout samples".into()));
    }
    let mse = (0..5).map(|c| ss[c] / count[c].max(1) as f64).sum::<f64>() / 5.0;
    Ok(HoldoutScore {
        map_rmse: mse.sqrt(),
        aggregate_mono_violations: violations,
        samples,
    })
}

/// Predicted ΔV_th at one temperature against the oracle curves at two
/// bracketing temperatures, for one thickness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketCurve {
    pub t_hzo: f64,
    pub taus: Vec<f64>,
    pub predicted: Vec<f64>,
    pub lower_temp: Vec<f64>,
    pub upper_temp: Vec<f64>,
    /// Predicted value within `[min, max]` of the two oracle curves at every `tau > 0`.
    pub between: bool,
}

/// For every thickness with oracle trajectories at both `lo` and `hi`,
/// checks the predicted ΔV_th(tau) at `temp` over the Table I times.
pub fn bracket_check(dataset: &Dataset, predictor: &Predictor, temp: f64, lo: f64, hi: f64) -> Result<Vec<BracketCurve>> {
    let m = &dataset.manifest;
    let trajs = m.trajectories();
    let oracle_curve = |t: f64, temp: f64| -> Option<Vec<f64>> {
        let tr = trajs.iter().find(|tr| tr.t_hzo == t && tr.temp == temp)?;
        let at = |tau: f64| tr.samples.iter().map(|&i| &m.samples[i]).find(|s| s.params.tau == tau).map(|s| s.vth);
        let base = at(0.0)?;
        TABLE_TAUS[1..].iter().map(|&tau| at(tau).map(|v| v - base)).collect()
    };
    let mut thicknesses: Vec<f64> = trajs.iter().map(|t| t.t_hzo).collect();
    thicknesses.sort_by(f64::total_cmp);
    thicknesses.dedup();
    let mut out = Vec::new();
    for t in thicknesses {
        let (Some(a), Some(b)) = (oracle_curve(t, lo), oracle_curve(t, hi)) else {
            continue;
        };
        let taus = TABLE_TAUS[1..].to_vec();
        let predicted = predictor.retention(t, temp, &taus)?;
        let between = predicted
            .iter()
            .zip(a.iter().zip(&b))
            .all(|(p, (x, y))| *p >= x.min(*y) && *p <= x.max(*y));
        out.push(BracketCurve {
            t_hzo: t,
            taus,
            predicted,
            lower_temp: a,
            upper_temp: b,
            between,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub seed: u64,
    pub holdout: HoldoutScore,
    /// Holdout RMSE of floored log10 I_D through the shared IV-Net, decades.
    pub holdout_iv_rmse: f64,
    /// Holdout V_th RMSE through the shared IV-Net, V.
    pub holdout_vth_rmse_v: f64,
    pub holdout_iv_mono_violations: usize,
    pub final_data_loss: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub weights: LossWeights,
    pub runs: Vec<ArmRun>,
    pub mean_iv_rmse: f64,
    /// Population standard deviation across seeds.
    pub std_iv_rmse: f64,
    pub mean_map_rmse: f64,
    pub std_map_rmse: f64,
    pub mean_vth_rmse_v: f64,
    pub total_aggregate_violations: usize,
}

impl ArmReport {
    fn new(name: &str, weights: LossWeights, runs: Vec<ArmRun>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean_std = |f: &dyn Fn(&ArmRun) -> f64| {
            let mean = runs.iter().map(f).sum::<f64>() / n;
            let var = runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (mean_iv_rmse, std_iv_rmse) = mean_std(&|r| r.holdout_iv_rmse);
        let (mean_map_rmse, std_map_rmse) = mean_std(&|r| r.holdout.map_rmse);
        Self {
            name: name.into(),
            weights,
            mean_iv_rmse,
            std_iv_rmse,
            mean_map_rmse,
            std_map_rmse,
            mean_vth_rmse_v: runs.iter().map(|r| r.holdout_vth_rmse_v).sum::<f64>() / n,
            total_aggregate_violations: runs.iter().map(|r| r.holdout.aggregate_mono_violations).sum(),
            runs,
        }
    }
}

/// Per-curve transfer characteristics on one holdout sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub id: String,
    pub params: DeviceParams,
    pub truth: IvCurve,
    pub baseline: Vec<f64>,
    pub physics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub spec: CompareSpec,
    pub baseline: ArmReport,
    pub physics: ArmReport,
    /// `100 * (1 - rmse_physics / rmse_baseline)` on mean holdout I-V RMSE.
    pub rmse_improvement_pct: f64,
    /// The same ratio on mean holdout map RMSE.
    pub map_rmse_improvement_pct: f64,
    pub physics_not_worse: bool,
    pub physics_zero_violations: bool,
    /// First-seed physics arm through the shared IV-Net at 350 K.
    pub bracket_350k: Vec<BracketCurve>,
    pub curves: Vec<CurveComparison>,
}

/// Trains both arms for every seed on identical data and budgets.
pub fn compare_physics(dataset: &Dataset, spec: &CompareSpec, log: &mut dyn FnMut(&str)) -> Result<ComparisonReport> {
    if spec.seeds.is_empty() {
        return Err(Error::Usage("comparison needs at least one seed".into()));
    }
    log("training shared IV-Net on oracle maps");
    let iv_spec = IvTrainSpec {
        map_source: MapSource::Oracle,
        ..spec.ivnet.clone()
    };
    let ivnet = train_ivnet(dataset, None, &iv_spec, &mut |_| {})?.model;

    let mut arms = Vec::new();
    let mut first_models = Vec::new();
    for (name, weights) in [("fno", spec.baseline_weights), ("pino", spec.physics_weights)] {
        let mut runs = Vec::new();
        for &seed in &spec.seeds {
            let arm_spec = FnoTrainSpec {
                weights,
                seed,
                ..spec.budget.clone()
            };
            let t0 = Instant::now();
            let run = train_fno(dataset, &arm_spec, &mut |_| {})?;
            let train_seconds = t0.elapsed().as_secs_f64();
            let holdout = holdout_score(dataset, &run.model)?;
            let (iv_rmse, vth_rmse, iv_viol) = readout_holdout(dataset, &run.model, &ivnet)?;
            log(&format!(
                "{name} seed {seed}: holdout I-V RMSE {iv_rmse:.4} dec, map RMSE {:.5}, V_th RMSE {:.4} V, violations {} ({train_seconds:.0} s)",
                holdout.map_rmse, vth_rmse, holdout.aggregate_mono_violations
            ));
            runs.push(ArmRun {
                seed,
                holdout,
                holdout_iv_rmse: iv_rmse,
                holdout_vth_rmse_v: vth_rmse,
                holdout_iv_mono_violations: iv_viol,
                final_data_loss: run.history.last().map(|r| r.data).unwrap_or(f64::NAN),
                train_seconds,
            });
            if seed == spec.seeds[0] {
                first_models.push(run.model);
            }
        }
        arms.push(ArmReport::new(name, weights, runs));
    }
    let physics = arms.pop().unwrap();
    let baseline = arms.pop().unwrap();
    let physics_model = first_models.pop().unwrap();
    let baseline_model = first_models.pop().unwrap();

    let pino = Predictor::new(physics_model, ivnet.clone())?;
    let fno = Predictor::new(baseline_model, ivnet)?;
    let bracket_350k = bracket_check(dataset, &pino, 350.0, 300.0, 400.0)?;
    let m = &dataset.manifest;
    let mut curves = Vec::new();
    for i in m.sample_indices(Split::Holdout) {
        let rec = &m.samples[i];
        let a = fno.predict_batch(&[rec.params])?.pop().unwrap();
        let b = pino.predict_batch(&[rec.params])?.pop().unwrap();
        curves.push(CurveComparison {
            id: rec.id.clone(),
            params: rec.params,
            truth: rec.iv.clone(),
            baseline: a.iv.log10_id,
            physics: b.iv.log10_id,
        });
    }
    Ok(ComparisonReport {
        spec: spec.clone(),
        rmse_improvement_pct: 100.0 * (1.0 - physics.mean_iv_rmse / baseline.mean_iv_rmse),
        map_rmse_improvement_pct: 100.0 * (1.0 - physics.mean_map_rmse / baseline.mean_map_rmse),
        physics_not_worse: physics.mean_iv_rmse <= baseline.mean_iv_rmse,
        physics_zero_violations: physics.total_aggregate_violations == 0,
        baseline,
        physics,
        bracket_350k,
        curves,
    })
}

/// Holdout I-V RMSE, V_th RMSE and IV ripple count of `fno` read out by `ivnet`.
fn readout_holdout(dataset: &Dataset, fno: &FnoModel, ivnet: &IvNetModel) -> Result<(f64, f64, usize)> {
    let predictor = Predictor::new(fno.clone(), ivnet.clone())?;
    let report = evaluate(dataset, &predictor)?;
    let h = report
        .holdout
        .ok_or_else(|| Error::Config("dataset has no holdout samples".into()))?;
    Ok((h.iv_rmse, h.vth_rmse_v, h.iv_mono_violations))
}
