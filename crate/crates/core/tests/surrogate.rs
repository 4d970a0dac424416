mod common;

use std::sync::Arc;

use fefet_core::dataset::*;
use fefet_core::numerics::{grad_check, Graph, GridSpec, ParamKind, ParamStore, SpectralPlan, Tensor};
use fefet_core::oracle::poisson::{poisson_source, stack_interior};
use fefet_core::oracle::{build_geometry, compute_aggregates, simulate, DeviceParams, Masks, OracleConfig, TABLE_TAUS};
use fefet_core::surrogate::*;
use fefet_core::Error;

fn table_stats(channels: Vec<ChannelStats>) -> NormStats {
    NormStats {
        t_hzo: ScalarRange { min: 5.0, max: 9.0 },
        temp: ScalarRange { min: 300.0, max: 473.0 },
        s_tau: ScalarRange {
            min: 0.0,
            max: time_embed(1e4).unwrap(),
        },
        channels,
    }
}

fn unit_channels() -> Vec<ChannelStats> {
    vec![ChannelStats { mean: 0.0, std: 1.0 }; 5]
}

fn full_masks(n: usize) -> Masks {
    Masks {
        stack: vec![1; n],
        fe: vec![1; n],
        interface_n: vec![0; n],
        interface_p: vec![0; n],
        channel: vec![0; n],
    }
}

#[test]
fn embed_maps_table_corners() {
    let s = table_stats(unit_channels());
    let e = s.embed(&DeviceParams::new(7.0, 386.5, 0.0)).unwrap();
    assert_eq!(e, [0.0, 0.0, -1.0]);
    let e = s.embed(&DeviceParams::new(5.0, 300.0, 1e4)).unwrap();
    for (a, b) in e.iter().zip([-1.0, -1.0, 1.0]) {
        assert!((a - b).abs() < 1e-4, "{e:?}");
    }
    let e = s.embed(&DeviceParams::new(9.0, 473.0, 0.0)).unwrap();
    assert_eq!(e, [1.0, 1.0, -1.0]);
    // Out of range extrapolates linearly.
    let e = s.embed(&DeviceParams::new(10.0, 300.0, 0.0)).unwrap();
    assert!((e[0] - 1.5).abs() < 1e-12);
}

#[test]
fn lift_inputs_layout() {
    let grid = GridSpec::square(32);
    let geo = build_geometry(7.0, &OracleConfig::default(), &grid).unwrap();
    let n = grid.len();
    let x = lift_inputs(&[0.25, -0.5, 0.75], 32, 32, &geo.masks);
    assert_eq!(x.len(), N_INPUTS * n);
    let plane = |c: usize| &x[c * n..(c + 1) * n];
    for c in 0..2 {
        let lo = plane(c).iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 31.0 / 32.0));
    }
    assert_eq!(plane(0)[grid.idx(3, 5)], 3.0 / 32.0);
    assert_eq!(plane(1)[grid.idx(3, 5)], 5.0 / 32.0);
    let as_u8 = |c: usize| plane(c).iter().map(|&v| v as u8).collect::<Vec<_>>();
    assert_eq!(as_u8(2), geo.masks.stack);
    assert_eq!(as_u8(3), geo.masks.fe);
    for (c, v) in [(4, 0.25), (5, -0.5), (6, 0.75)] {
        assert!(plane(c).iter().all(|&p| p == v));
    }
}

#[test]
fn zero_weights_output_projection_bias() {
    let cfg = FnoConfig {
        modes_x: 4,
        modes_y: 4,
        width: 6,
        n_layers: 3,
        proj_hidden: 8,
        ..Default::default()
    };
    let mut p = init_fno(&cfg, 3).unwrap();
    for (_, param) in p.iter_mut() {
        param.tensor.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let bias = [0.5, -1.0, 2.0, 3.5, -0.25];
    p.get_mut("proj2.b").unwrap().data.copy_from_slice(&bias);
    let plan = fno_plan::<f64>(&cfg, 16, 16).unwrap();
    let mut g = Graph::new(&p);
    let x = g.input(Tensor::from_vec(&[2, N_INPUTS, 16, 16], common::lcg_values(2 * N_INPUTS * 256, 1)));
    let y = fno_forward(&mut g, x, &cfg, &plan).unwrap();
    let out = g.value(y);
    for (k, plane) in out.data.chunks(256).enumerate() {
        assert!(plane.iter().all(|&v| v == bias[k % 5]));
    }
}

#[test]
fn full_mode_spectral_layer_is_circular_convolution() {
    let (nx, ny) = (8, 8);
    let x = common::lcg_values(nx * ny, 11);
    let kernel = common::lcg_values(nx * ny, 12);
    let k_hat = common::naive_dft2(&kernel, nx, ny);
    let plan = Arc::new(SpectralPlan::<f64>::full(nx, ny).unwrap());
    let (mx2, my) = (2 * plan.mx, plan.my);
    let mut w = vec![0.0; mx2 * my * 2];
    for r in 0..mx2 {
        for ky in 0..my {
            let c = k_hat[plan.kx(r) * ny + ky];
            w[(r * my + ky) * 2] = c.re;
            w[(r * my + ky) * 2 + 1] = c.im;
        }
    }
    let mut store = ParamStore::new();
    store.insert("w", Tensor::from_vec(&[1, 1, mx2, my, 2], w), ParamKind::Complex);
    let mut g = Graph::new(&store);
    let xv = g.input(Tensor::from_vec(&[1, 1, nx, ny], x.clone()));
    let wv = g.param("w").unwrap();
    let y = g.spectral_conv(xv, wv, plan);
    let expect = common::circular_conv(&x, &kernel, nx, ny);
    let worst = g
        .value(y)
        .data
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "max deviation {worst}");
}

/// Seven smooth input planes sampled at `n x n`, with wavenumbers below 6.
fn band_limited_inputs(n: usize) -> Vec<f64> {
    let coef = common::lcg_values(N_INPUTS * 4 * 3, 5);
    let mut out = Vec::with_capacity(N_INPUTS * n * n);
    for c in 0..N_INPUTS {
        for ix in 0..n {
            for iy in 0..n {
                let (u, v) = (ix as f64 / n as f64, iy as f64 / n as f64);
                let mut s = 0.0;
                for t in 0..4 {
                    let k = &coef[(c * 4 + t) * 3..(c * 4 + t + 1) * 3];
                    let (kx, ky) = ((k[0] * 5.0).round(), (k[1].abs() * 5.0).round());
                    s += (2.0 * std::f64::consts::PI * (kx * u + ky * v) + 3.0 * k[2]).cos();
                }
                out.push(s / 4.0);
            }
        }
    }
    out
}

#[test]
fn same_weights_agree_across_resolutions_on_band_limited_input() {
    // One Fourier layer: every nonlinearity is pointwise and acts after the
    // last truncation, so grid points shared by both resolutions must agree.
    let cfg = FnoConfig {
        width: 6,
        n_layers: 1,
        proj_hidden: 16,
        ..Default::default()
    };
    let p = init_fno(&cfg, 9).unwrap();
    let run = |n: usize| {
        let plan = fno_plan::<f64>(&cfg, n, n).unwrap();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::from_vec(&[1, N_INPUTS, n, n], band_limited_inputs(n)));
        let y = fno_forward(&mut g, x, &cfg, &plan).unwrap();
        g.value(y).data.clone()
    };
    let (a, b) = (run(32), run(64));
    let mut worst = 0.0f64;
    for c in 0..N_OUTPUTS {
        for ix in 0..32 {
            for iy in 0..32 {
                let va = a[c * 1024 + ix * 32 + iy];
                let vb = b[c * 4096 + 2 * ix * 64 + 2 * iy];
                worst = worst.max((va - vb).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn check_grid_rejects_mode_mismatch() {
    let cfg = FnoConfig::default();
    assert!(matches!(fno_plan::<f32>(&cfg, 16, 16), Err(Error::Config(_))));
    assert!(matches!(fno_plan::<f32>(&cfg, 48, 48), Err(Error::Config(_))));
}

fn data_loss_naive(pred: &[f64], truth: &[f64], masks: &[Masks], n: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..5 {
        let (mut sum, mut count) = (0.0, 0.0);
        for (b, m) in masks.iter().enumerate() {
            for i in 0..n {
                let k = (b * 5 + c) * n + i;
                if c == J_CHANNEL || m.stack[i] == 1 {
                    sum += (pred[k] - truth[k]).powi(2);
                    count += 1.0;
                }
            }
        }
        total += sum / count;
    }
    total / 5.0
}

#[test]
fn data_loss_matches_naive_loop_and_examples() {
    let n = 64;
    let masks: Vec<Masks> = (0..2)
        .map(|b| {
            let mut m = full_masks(n);
            m.stack = common::lcg_values(n, 20 + b).iter().map(|&v| (v > 0.0) as u8).collect();
            m
        })
        .collect();
    let mrefs: Vec<&Masks> = masks.iter().collect();
    let pred = common::lcg_values(2 * 5 * n, 21);
    let truth = common::lcg_values(2 * 5 * n, 22);
    let store = ParamStore::<f64>::new();
    let eval = |p: &[f64], t: &[f64]| {
        let mut g = Graph::new(&store);
        let pv = g.input(Tensor::from_vec(&[2, 5, 8, 8], p.to_vec()));
        let tv = g.input(Tensor::from_vec(&[2, 5, 8, 8], t.to_vec()));
        let l = loss_data(&mut g, pv, tv, &mrefs);
        g.scalar(l)
    };
    let got = eval(&pred, &truth);
    let want = data_loss_naive(&pred, &truth, &masks, n);
    assert!((got - want).abs() < 1e-12 * want.abs(), "{got} vs {want}");

    assert_eq!(eval(&truth, &truth), 0.0);
    let mut shifted = truth.clone();
    for b in 0..2 {
        shifted[(b * 5 + 2) * n..(b * 5 + 3) * n].iter_mut().for_each(|v| *v += 1.0);
    }
    // One channel with unit error contributes 1.0 to a mean over five channels.
    assert!((eval(&shifted, &truth) - 0.2).abs() < 1e-12);
}

/// Oracle maps at 64x64 (two trap rows) for a mid-retention state.
fn oracle_case() -> (fefet_core::oracle::Geometry, Vec<f64>, f64) {
    let grid = GridSpec::square(64);
    let cfg = OracleConfig::default();
    let traj = simulate(7.0, 400.0, &grid, &cfg, &[100.0]).unwrap();
    let geo = build_geometry(7.0, &cfg, &grid).unwrap();
    let b = &traj.snapshots[0].bundle;
    let maps: Vec<f64> = b.channels().iter().flat_map(|c| c.values.iter().copied()).collect();
    let src = poisson_source(&b.p_y.values, &b.n_t.values, &b.p_t.values, &geo);
    let interior = stack_interior(&geo);
    let (s, c) = src
        .iter()
        .zip(&interior)
        .filter(|(_, &k)| k)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
    (geo, maps, (s / c as f64).sqrt())
}

fn poisson_loss(geo: &fefet_core::oracle::Geometry, maps: &[f64], stats: &NormStats, r_scale: f64) -> f64 {
    let n = geo.grid.len();
    let mut norm = maps.to_vec();
    stats.normalize(&mut norm, &geo.masks.stack);
    let sg = Arc::new(SampleGeometry::<f64>::new(geo));
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let pv = g.input(Tensor::from_vec(&[1, 5, geo.grid.nx, geo.grid.ny], norm));
    assert_eq!(maps.len(), 5 * n);
    let l = loss_poisson(&mut g, pv, stats, &[sg], r_scale);
    g.scalar(l)
}

#[test]
fn poisson_loss_on_oracle_fields() {
    let (geo, maps, r_scale) = oracle_case();
    let cfg = OracleConfig::default();
    let stats = table_stats(
        [(0.3, 0.5), (0.05, 0.1), (-2e7, 5e7), (2e7, 5e7), (-3.0, 4.0)]
            .iter()
            .map(|&(mean, std)| ChannelStats { mean, std })
            .collect(),
    );
    let truth = poisson_loss(&geo, &maps, &stats, r_scale);
    // With r_scale the RMS source, the loss is the squared relative residual.
    assert!(truth <= (10.0 * cfg.cg_tol).powi(2), "truth loss {truth}");

    let interior = stack_interior(&geo);
    let cell = (0..geo.grid.len()).find(|&i| interior[i] && i / geo.grid.ny == 32).unwrap();
    let mut bumped = maps.clone();
    bumped[cell] += 0.1;
    assert!(poisson_loss(&geo, &bumped, &stats, r_scale) > truth);

    // Zero potential and polarization leave only the trap charge term.
    let n = geo.grid.len();
    let mut traps = maps.clone();
    traps[..2 * n].iter_mut().for_each(|v| *v = 0.0);
    let stats = table_stats(unit_channels());
    let got = poisson_loss(&geo, &traps, &stats, r_scale);
    let (mut sum, mut count) = (0.0, 0.0);
    for i in 0..n {
        if interior[i] {
            sum += ((traps[3 * n + i] - traps[2 * n + i]) / r_scale).powi(2);
            count += 1.0;
        }
    }
    let want = sum / count;
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
}

#[test]
fn aggregates_on_graph_match_oracle() {
    let (geo, maps, _) = oracle_case();
    let n = geo.grid.len();
    let scales = PhysicsScales {
        r_scale: 1.0,
        p_ref: 0.15,
        q_ref: 0.09,
    };
    let want = compute_aggregates(&maps[n..2 * n], &maps[2 * n..3 * n], &maps[3 * n..4 * n], &geo);
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let stats = table_stats(unit_channels());
    let pv = g.input(Tensor::from_vec(&[1, 5, 64, 64], maps.clone()));
    let sg = Arc::new(SampleGeometry::<f64>::new(&geo));
    let (p, q) = aggregates_graph(&mut g, pv, &stats, &[sg], &scales);
    assert!((g.scalar(p) * scales.p_ref - want.p_bar).abs() < 1e-12 * want.p_bar);
    assert!((g.scalar(q) * scales.q_ref - want.q_bar()).abs() < 1e-12 * want.q_bar());
}

fn mono_on_graph(p: &[f64], q: &[f64], s: &[f64]) -> Result<f64, Error> {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let b = p.len();
    let pv = g.input(Tensor::from_vec(&[b, 1], p.to_vec()));
    let qv = g.input(Tensor::from_vec(&[b, 1], q.to_vec()));
    let (pairs, ds) = mono_pairs(&[0..b], s)?;
    Ok(loss_mono(&mut g, pv, qv, pairs, &ds).map(|v| g.scalar(v)).unwrap_or(0.0))
}

#[test]
fn mono_loss_examples() {
    let s = [0.0, 1.0, 2.0];
    assert_eq!(mono_on_graph(&[3.0, 2.0, 1.0], &[1.0, 0.5, 0.1], &s).unwrap(), 0.0);
    // The last pair rises by 0.05; averaged over two pairs.
    let got = mono_on_graph(&[1.0, 0.9, 0.95], &[1.0, 0.5, 0.1], &s).unwrap();
    assert!((got * 2.0 - 0.05).abs() < 1e-12, "{got}");
    assert!(matches!(mono_on_graph(&[1.0, 0.9], &[1.0, 0.5], &[1.0, 0.5]), Err(Error::Usage(_))));
}

#[test]
fn mono_loss_matches_brute_force() {
    for seed in 0..20u64 {
        let b = 2 + (seed as usize % 6);
        let p = common::lcg_values(b, seed * 3);
        let q = common::lcg_values(b, seed * 3 + 1);
        let mut s: Vec<f64> = common::lcg_values(b, seed * 3 + 2).iter().map(|v| v + 1.5).collect();
        for i in 1..b {
            s[i] += s[i - 1];
        }
        let mut brute = 0.0;
        for i in 0..b - 1 {
            for j in (i + 1)..b {
                if j == i + 1 {
                    let ds = s[j] - s[i];
                    brute += ((p[j] - p[i]) / ds).max(0.0) + ((q[j] - q[i]) / ds).max(0.0);
                }
            }
        }
        brute /= (b - 1) as f64;
        let got = mono_on_graph(&p, &q, &s).unwrap();
        assert!((got - brute).abs() < 1e-12, "seed {seed}: {got} vs {brute}");
        assert!((mono_penalty(&p, &q, &s) - brute).abs() < 1e-12);
    }
}

/// Miniature FNO under data, Poisson and monotonicity losses in double precision.
pub fn miniature_fno_gradcheck() -> fefet_core::numerics::GradCheckReport {
    let cfg = FnoConfig {
        modes_x: 3,
        modes_y: 3,
        width: 4,
        n_layers: 2,
        lift_hidden: vec![4],
        proj_hidden: 5,
        ..Default::default()
    };
    let params = init_fno(&cfg, 0).unwrap();
    let (nx, ny, b) = (8, 8, 2);
    let n = nx * ny;
    let plan = fno_plan::<f64>(&cfg, nx, ny).unwrap();
    let mut masks = full_masks(n);
    masks.stack = (0..n).map(|i| (i % ny >= 2 && i % ny < 6) as u8).collect();
    let x = common::lcg_values(b * N_INPUTS * n, 40);
    let truth = common::lcg_values(b * N_OUTPUTS * n, 41);
    let loss = |g: &mut Graph<'_, f64>| {
        let xv = g.input(Tensor::from_vec(&[b, N_INPUTS, nx, ny], x.clone()));
        let tv = g.input(Tensor::from_vec(&[b, N_OUTPUTS, nx, ny], truth.clone()));
        let y = fno_forward(g, xv, &cfg, &plan)?;
        Ok(loss_data(g, y, tv, &[&masks, &masks]))
    };
    grad_check(loss, &params, 1e-4, 32, 0).unwrap()
}

#[test]
fn miniature_fno_gradients_match_finite_differences() {
    let report = miniature_fno_gradcheck();
    assert!(report.tensors.len() >= 10);
    assert!(report.max_rel_err() < 1e-3, "{report:#?}");
    assert!(report.median_rel_err() < 1e-5, "{report:#?}");
}

fn two_trajectory_dataset(dir: &std::path::Path) -> Dataset {
    let specs = [
        SweepSpec {
            name: "a".into(),
            t_hzo: vec![5.0],
            temp: vec![300.0],
            taus: TABLE_TAUS.to_vec(),
            split: Split::Seen,
        },
        SweepSpec {
            name: "b".into(),
            t_hzo: vec![9.0],
            temp: vec![473.0],
            taus: TABLE_TAUS.to_vec(),
            split: Split::Seen,
        },
    ];
    generate_sweep(&GridSpec::square(32), &OracleConfig::default(), &specs, dir, 1).unwrap()
}

fn toy_spec(epochs: usize, weights: LossWeights) -> FnoTrainSpec {
    FnoTrainSpec {
        fno: FnoConfig {
            modes_x: 4,
            modes_y: 4,
            width: 8,
            n_layers: 2,
            proj_hidden: 16,
            train_resolution: 32,
            ..Default::default()
        },
        weights,
        optim: OptimConfig {
            epochs,
            ..Default::default()
        },
        seed: 0,
    }
}

#[test]
fn toy_training_reduces_data_loss_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ds = two_trajectory_dataset(dir.path());
    let spec = toy_spec(50, LossWeights::default());
    let a = train_fno(&ds, &spec, &mut |_| {}).unwrap();
    assert_eq!(a.history.len(), 50);
    let (first, last) = (a.history[0], a.history[49]);
    assert!(last.data < first.data, "{first:?} -> {last:?}");
    assert!(a.history.iter().any(|r| r.poisson > 0.0));

    let b = train_fno(&ds, &spec, &mut |_| {}).unwrap();
    for (name, p) in a.model.params.iter() {
        let q = b.model.params.get(name).unwrap();
        let bits = |t: &Tensor<f32>| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.tensor), bits(q), "{name}");
    }
    assert_eq!(a.model.to_checkpoint().unwrap().to_bytes().unwrap(), b.model.to_checkpoint().unwrap().to_bytes().unwrap());
}

#[test]
fn data_only_training_has_zero_physics_terms() {
    let dir = tempfile::tempdir().unwrap();
    let ds = two_trajectory_dataset(dir.path());
    let run = train_fno(&ds, &toy_spec(3, LossWeights::data_only()), &mut |_| {}).unwrap();
    for r in &run.history {
        assert_eq!((r.poisson, r.mono), (0.0, 0.0));
        assert_eq!(r.total, r.data);
    }
    assert!(!run.model.meta.loss_weights.is_physics_informed());
}

#[test]
fn trained_model_round_trips_through_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = two_trajectory_dataset(dir.path());
    let run = train_fno(&ds, &toy_spec(2, LossWeights::default()), &mut |_| {}).unwrap();
    let path = dir.path().join("m.few");
    run.model.save(&path).unwrap();
    let back = FnoModel::load(&path).unwrap();
    assert_eq!(back.meta, run.model.meta);
    back.save(&dir.path().join("m2.few")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("m2.few")).unwrap());

    // Inference at twice the training resolution uses the same weights.
    let grid = back.grid_at(64);
    let geo = back.geometry(7.0, &grid).unwrap();
    let bundle = back.predict_bundle(&DeviceParams::new(7.0, 350.0, 10.0), &geo).unwrap();
    assert_eq!(bundle.grid().nx, 64);
    assert!(bundle.channels().iter().all(|c| c.is_finite()));
}

#[test]
fn training_rejects_modes_that_do_not_fit_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ds = two_trajectory_dataset(dir.path());
    let bad = FnoTrainSpec {
        fno: FnoConfig {
            modes_x: 20,
            ..toy_spec(1, LossWeights::default()).fno
        },
        ..toy_spec(1, LossWeights::default())
    };
    assert!(matches!(train_fno(&ds, &bad, &mut |_| {}), Err(Error::Config(_))));
}
