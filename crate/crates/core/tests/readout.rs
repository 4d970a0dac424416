mod common;

use std::sync::OnceLock;

use fefet_core::dataset::*;
use fefet_core::numerics::{grad_check, Graph, GridSpec, Tensor};
use fefet_core::oracle::{DeviceParams, OracleConfig, TABLE_TAUS};
use fefet_core::readout::*;
use fefet_core::surrogate::{FnoConfig, FnoModel, FnoTrainSpec, LossWeights, OptimConfig};
use fefet_core::Error;

fn mini_config() -> IvNetConfig {
    IvNetConfig {
        encoder_channels: vec![3, 4],
        scalar_hidden: vec![5, 4],
        head_hidden: 6,
        n_vg: 7,
        ..Default::default()
    }
}

fn mini_scale(n: usize) -> OutputScale {
    OutputScale {
        mean: common::lcg_values(n, 90).iter().map(|v| -8.0 + 2.0 * v).collect(),
        std: common::lcg_values(n, 91).iter().map(|v| 1.5 + v).collect(),
        floor: -14.0,
    }
}

#[test]
fn miniature_ivnet_gradients_match_finite_differences() {
    let cfg = mini_config();
    let params = init_ivnet(&cfg, 4).unwrap();
    let scale = mini_scale(cfg.n_vg);
    let maps = common::lcg_values(2 * 5 * 64, 92);
    let scalars = common::lcg_values(6, 93);
    let target: Vec<f64> = common::lcg_values(2 * cfg.n_vg, 94).iter().map(|v| -8.0 + 3.0 * v).collect();
    let loss = |g: &mut Graph<'_, f64>| {
        let m = g.input(Tensor::from_vec(&[2, 5, 8, 8], maps.clone()));
        let s = g.input(Tensor::from_vec(&[2, 3], scalars.clone()));
        let t = g.input(Tensor::from_vec(&[2, cfg.n_vg], target.clone()));
        let out = ivnet_forward(g, m, s, &cfg, &scale)?;
        let d = g.sub(out.floored, t);
        let d2 = g.square(d);
        Ok(g.mean_all(d2))
    };
    let report = grad_check(loss, &params, 1e-4, 32, 1).unwrap();
    assert!(report.max_rel_err() < 1e-3, "{report:#?}");
    assert!(report.median_rel_err() < 1e-5, "{report:#?}");
}

fn run_mini(params: &fefet_core::numerics::ParamStore<f64>, maps: &[f64], scalars: &[f64]) -> Vec<f64> {
    let cfg = mini_config();
    let mut g = Graph::new(params);
    let m = g.input(Tensor::from_vec(&[1, 5, 8, 8], maps.to_vec()));
    let s = g.input(Tensor::from_vec(&[1, 3], scalars.to_vec()));
    let out = ivnet_forward(&mut g, m, s, &cfg, &mini_scale(cfg.n_vg)).unwrap();
    g.value(out.floored).data.clone()
}

#[test]
fn fusion_weights_select_the_paths() {
    let cfg = mini_config();
    let mut p = init_ivnet(&cfg, 5).unwrap();
    let (m1, m2) = (common::lcg_values(320, 1), common::lcg_values(320, 2));
    let (s1, s2) = ([0.1, -0.4, 0.9], [-0.7, 0.3, 0.0]);

    p.get_mut("fuse.a").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(run_mini(&p, &m1, &s1), run_mini(&p, &m2, &s1));
    assert_ne!(run_mini(&p, &m1, &s1), run_mini(&p, &m1, &s2));

    let mut p = init_ivnet(&cfg, 5).unwrap();
    p.get_mut("fuse.b").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(run_mini(&p, &m1, &s1), run_mini(&p, &m1, &s2));
    assert_ne!(run_mini(&p, &m1, &s1), run_mini(&p, &m2, &s1));
}

#[test]
fn output_respects_floor_and_rejects_bad_inputs() {
    let cfg = mini_config();
    let mut p = init_ivnet(&cfg, 6).unwrap();
    p.get_mut("head2.b").unwrap().data.iter_mut().for_each(|v| *v = -50.0);
    let out = run_mini(&p, &common::lcg_values(320, 3), &[0.0, 0.0, 0.0]);
    assert!(out.iter().all(|&v| v == -14.0));

    let mut g = Graph::new(&p);
    let m = g.input(Tensor::from_vec(&[1, 4, 8, 8], vec![0.0; 256]));
    let s = g.input(Tensor::from_vec(&[1, 3], vec![0.0; 3]));
    assert!(matches!(ivnet_forward(&mut g, m, s, &cfg, &mini_scale(7)), Err(Error::Config(_))));
}

/// Small dataset, FNO and IV-Net shared by the pipeline tests.
struct Fixture {
    _dir: tempfile::TempDir,
    dataset: Dataset,
    fno: FnoModel,
}

fn small_fno() -> FnoTrainSpec {
    FnoTrainSpec {
        fno: FnoConfig {
            modes_x: 6,
            modes_y: 6,
            width: 12,
            n_layers: 2,
            proj_hidden: 32,
            train_resolution: 32,
            ..Default::default()
        },
        weights: LossWeights::default(),
        optim: OptimConfig {
            epochs: 60,
            ..Default::default()
        },
        seed: 0,
    }
}

fn small_ivnet(epochs: usize, source: MapSource) -> IvTrainSpec {
    IvTrainSpec {
        ivnet: IvNetConfig {
            encoder_channels: vec![8, 16],
            scalar_hidden: vec![16, 16],
            head_hidden: 32,
            ..Default::default()
        },
        optim: OptimConfig {
            epochs,
            lr: 3e-3,
            ..Default::default()
        },
        batch_size: 6,
        seed: 0,
        map_source: source,
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = |name: &str, t: f64, temp: f64, taus: &[f64], split| SweepSpec {
            name: name.into(),
            t_hzo: vec![t],
            temp: vec![temp],
            taus: taus.to_vec(),
            split,
        };
        let specs = [
            spec("a", 5.0, 300.0, &TABLE_TAUS, Split::Seen),
            spec("b", 9.0, 473.0, &TABLE_TAUS, Split::Seen),
            spec("c", 7.0, 400.0, &TABLE_TAUS, Split::Seen),
            spec("h", 7.0, 350.0, &[0.0, 10.0, 300.0, 1e4], Split::Holdout),
        ];
        let dataset = generate_sweep(&GridSpec::square(32), &OracleConfig::default(), &specs, dir.path(), 1).unwrap();
        let fno = fefet_core::surrogate::train_fno(&dataset, &small_fno(), &mut |_| {}).unwrap().model;
        Fixture { _dir: dir, dataset, fno }
    })
}

#[test]
fn ivnet_training_converges_deterministically() {
    let f = fixture();
    let spec = small_ivnet(50, MapSource::Fno);
    let a = train_ivnet(&f.dataset, Some(&f.fno), &spec, &mut |_| {}).unwrap();
    assert!(a.history[49].loss < a.history[0].loss, "{:?}", (a.history[0], a.history[49]));
    let b = train_ivnet(&f.dataset, Some(&f.fno), &spec, &mut |_| {}).unwrap();
    assert_eq!(a.model.to_checkpoint().unwrap().to_bytes().unwrap(), b.model.to_checkpoint().unwrap().to_bytes().unwrap());
    assert!(a.model.meta.fno_checkpoint_sha256.is_some());

    // Upstream map error can only add to the readout's training loss.
    let o = train_ivnet(&f.dataset, None, &small_ivnet(50, MapSource::Oracle), &mut |_| {}).unwrap();
    assert!(o.history[49].loss <= a.history[49].loss * 1.05, "{} vs {}", o.history[49].loss, a.history[49].loss);
    assert!(o.model.meta.fno_checkpoint_sha256.is_none());
}

#[test]
fn fno_map_source_requires_a_checkpoint() {
    let f = fixture();
    let err = train_ivnet(&f.dataset, None, &small_ivnet(1, MapSource::Fno), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

fn predictor() -> &'static Predictor {
    static P: OnceLock<Predictor> = OnceLock::new();
    P.get_or_init(|| {
        let f = fixture();
        let iv = train_ivnet(&f.dataset, Some(&f.fno), &small_ivnet(150, MapSource::Fno), &mut |_| {}).unwrap();
        Predictor::new(f.fno.clone(), iv.model).unwrap()
    })
}

#[test]
fn predictions_are_stateless() {
    let p = predictor();
    let d = DeviceParams::new(7.0, 350.0, 1e3);
    let a = p.predict_batch(&[d]).unwrap().pop().unwrap();
    let b = p.predict_batch(&[d]).unwrap().pop().unwrap();
    assert_eq!(a.iv, b.iv);
    assert_eq!(a.vth, b.vth);
    assert_eq!(a.normalized, b.normalized);
    assert!(!a.extrapolated);
    assert_eq!(a.iv.v_g.len(), 61);
    // Batched and single predictions agree.
    let batch = p.predict_batch(&[DeviceParams::new(5.0, 300.0, 0.0), d]).unwrap();
    assert_eq!(batch[1].iv, a.iv);
}

#[test]
fn ivnet_checkpoint_round_trips() {
    let p = predictor();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("iv.few");
    p.ivnet.save(&path).unwrap();
    let back = IvNetModel::load(&path).unwrap();
    assert_eq!(back.meta, p.ivnet.meta);
    assert_eq!(back.to_checkpoint().unwrap().to_bytes().unwrap(), std::fs::read(&path).unwrap());
    // An FNO checkpoint is not an IV-Net.
    let fpath = dir.path().join("f.few");
    p.fno.save(&fpath).unwrap();
    assert!(matches!(IvNetModel::load(&fpath), Err(Error::Format(_))));
}

fn read_csv(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn report_r_squared_matches_recomputation_from_csv() {
    let f = fixture();
    let report = evaluate(&f.dataset, predictor()).unwrap();
    assert_eq!(report.seen.samples, 18);
    let h = report.holdout.as_ref().unwrap();
    assert_eq!(h.samples, 4);
    assert!(report.seen.channels.iter().all(|c| c.rel_err >= 0.0));
    assert!(report.seen.vth_r2 <= 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    report.write_samples_csv(&path).unwrap();
    let (header, rows) = read_csv(&path);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (split, t, p) = (col("split"), col("vth_true_v"), col("vth_pred_v"));
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for r in rows.iter().filter(|r| r[split] == "seen" && !r[p].is_empty()) {
        truth.push(r[t].parse::<f64>().unwrap());
        pred.push(r[p].parse::<f64>().unwrap());
    }
    assert_eq!(truth.len() + report.seen.vth_failures, 18);
    let r2 = common::r_squared(&truth, &pred);
    assert!((r2 - report.seen.vth_r2).abs() < 1e-6, "{r2} vs {}", report.seen.vth_r2);

    let cpath = dir.path().join("curves.csv");
    report.write_curves_csv(&cpath).unwrap();
    let (header, rows) = read_csv(&cpath);
    assert_eq!(header[0], "trajectory");
    assert_eq!(rows.len(), 3 * 6 + 4);
    report.write_json(&dir.path().join("report.json")).unwrap();
}

#[test]
fn r_squared_of_perfect_and_offset_predictions() {
    let t = [0.2, -0.1, 0.05, 0.4, 0.33];
    assert_eq!(r_squared(&t, &t), 1.0);
    let off: Vec<f64> = t.iter().map(|v| v + 0.01).collect();
    assert!(r_squared(&t, &off) < 1.0);
    assert!((r_squared(&t, &off) - common::r_squared(&t, &off)).abs() < 1e-12);
}

#[test]
fn sweeps_cover_the_range_and_flag_extrapolation() {
    let p = predictor();
    let fixed = DeviceParams::new(7.0, 350.0, 100.0);
    let rows = run_sweep(p, SweepVar::Thzo, fixed, 5.0, 9.0, 101).unwrap();
    assert_eq!(rows.len(), 101);
    assert_eq!((rows[0].value, rows[100].value), (5.0, 9.0));
    assert!(rows.iter().all(|r| !r.extrapolated));

    let rows = run_sweep(p, SweepVar::Thzo, fixed, 4.0, 10.0, 13).unwrap();
    for r in &rows {
        assert_eq!(r.extrapolated, r.value < 5.0 || r.value > 9.0, "{r:?}");
    }
    let rows = run_sweep(p, SweepVar::Tau, fixed, 0.0, 1e4, 101).unwrap();
    assert_eq!(rows.len(), 101);
    let mut buf = Vec::new();
    write_sweep_csv(&rows, SweepVar::Tau, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "tau_s,vth_v,extrapolated");
    assert_eq!(text.lines().count(), 102);
    assert!(matches!(run_sweep(p, SweepVar::Temp, fixed, 300.0, 400.0, 1), Err(Error::Usage(_))));
}

#[test]
fn retention_is_relative_to_time_zero() {
    let p = predictor();
    let d = p.retention(7.0, 400.0, &[0.0, 10.0, 1e3]).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d[0], 0.0);
}

#[test]
fn identical_arms_give_identical_results() {
    let f = fixture();
    let spec = CompareSpec {
        seeds: vec![0],
        budget: FnoTrainSpec {
            optim: OptimConfig {
                epochs: 3,
                ..Default::default()
            },
            ..small_fno()
        },
        baseline_weights: LossWeights::default(),
        physics_weights: LossWeights::default(),
        ivnet: small_ivnet(3, MapSource::Oracle),
    };
    let r = compare_physics(&f.dataset, &spec, &mut |_| {}).unwrap();
    assert_eq!(r.baseline.runs[0].holdout, r.physics.runs[0].holdout);
    assert_eq!(r.baseline.mean_map_rmse, r.physics.mean_map_rmse);
    assert_eq!(r.baseline.mean_iv_rmse, r.physics.mean_iv_rmse);
    assert_eq!(r.rmse_improvement_pct, 0.0);
    assert_eq!(r.curves.len(), 4);
    for c in &r.curves {
        assert_eq!(c.baseline, c.physics);
    }
}
