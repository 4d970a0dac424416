//! `fefet` command-line tool.
//!
//! Errors print one JSON line on stderr (`{"kind":..,"error":..}`); usage
//! errors exit with 2, everything else with 1.

mod config;

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fefet_client::{Client, ClientError};
use fefet_core::dataset::{generate_sweep, Dataset, FefFile, SweepSpec};
use fefet_core::interface::{PredictRequest, ServiceState};
use fefet_core::numerics::{GradCheckReport, GridSpec};
use fefet_core::oracle::DeviceParams;
use fefet_core::readout::*;
use fefet_core::surrogate::{train_fno, FnoModel, LossWeights};
use fefet_core::Error;
use serde_json::json;

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "fefet", version, about = "FeFET retention oracle, neural-operator surrogate and inference service")]
struct Cli {
    /// JSON file overriding default configuration (see README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Phase {
    Fno,
    Ivnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Fno,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Vary {
    Tau,
    Temp,
    Thzo,
}

impl From<Vary> for SweepVar {
    fn from(v: Vary) -> Self {
        match v {
            Vary::Tau => SweepVar::Tau,
            Vary::Temp => SweepVar::Temp,
            Vary::Thzo => SweepVar::Thzo,
        }
    }
}

/// Model checkpoints for local inference.
#[derive(Debug, clap::Args)]
struct Models {
    #[arg(long, default_value = "models/fno.few")]
    fno: PathBuf,
    #[arg(long, default_value = "models/ivnet.few")]
    ivnet: PathBuf,
    /// Use a running service instead of local checkpoints.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the oracle over the Table I sweep and write a dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Square grid side (overrides the config file).
        #[arg(long)]
        grid: Option<usize>,
        /// Also generate the held-out trajectories used by eval/compare.
        #[arg(long)]
        holdout: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the FNO (phase fno) or the IV readout (phase ivnet).
    Train {
        #[arg(long, value_enum)]
        phase: Phase,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Physics-informed losses for the FNO phase.
        #[arg(long, value_enum, default_value = "on")]
        physics: Switch,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// FNO checkpoint supplying maps for the ivnet phase.
        #[arg(long)]
        fno: Option<PathBuf>,
        /// Maps the IV readout trains on.
        #[arg(long, value_enum)]
        map_source: Option<Source>,
    },
    /// Evaluate a trained pipeline on a dataset; writes report.json and CSVs.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "models/fno.few")]
        fno: PathBuf,
        #[arg(long, default_value = "models/ivnet.few")]
        ivnet: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Data-only vs physics-informed FNO over several seeds.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "compare.json")]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// FNO epochs per arm and seed.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict the I_D-V_G curve and V_th of one device.
    Predict {
        #[arg(long)]
        thzo: f64,
        #[arg(long)]
        temp: f64,
        #[arg(long)]
        tau: f64,
        #[command(flatten)]
        models: Models,
        /// IV curve CSV.
        #[arg(long, default_value = "iv.csv")]
        out: PathBuf,
        /// Full-resolution predicted maps as a FEF1 file (local only).
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Sweep one input with the others fixed; writes a CSV.
    Sweep {
        #[arg(long, value_enum)]
        vary: Vary,
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long, default_value_t = 101)]
        n: usize,
        #[arg(long, default_value_t = 7.0)]
        thzo: f64,
        #[arg(long, default_value_t = 350.0)]
        temp: f64,
        #[arg(long, default_value_t = 100.0)]
        tau: f64,
        #[command(flatten)]
        models: Models,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Finite-difference gradient check of miniature FNO and IV-Net.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP inference API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "models/fno.few")]
        fno: PathBuf,
        #[arg(long, default_value = "models/ivnet.few")]
        ivnet: PathBuf,
        /// Directory with a built UI bundle to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = error_kind(&e);
            let msg = format!("{e:#}");
            eprintln!("{}", json!({ "kind": kind, "error": msg }));
            ExitCode::from(if kind == "usage" { 2 } else { 1 })
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Error>() {
            return c.kind();
        }
        if let Some(c) = cause.downcast_ref::<ClientError>() {
            return match c {
                ClientError::Api { kind, .. } if kind == "extraction" => "extraction",
                ClientError::Api { kind, .. } if kind == "bad_request" => "usage",
                ClientError::Api { .. } => "server",
                _ => "http",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

fn print(v: serde_json::Value) {
    println!("{v}");
}

fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate {
            out,
            grid,
            holdout,
            workers,
        } => generate(&cfg, &out, grid, holdout, workers),
        Command::Train {
            phase,
            data,
            out,
            physics,
            seed,
            epochs,
            fno,
            map_source,
        } => {
            let ds = Dataset::open(&data)?;
            match phase {
                Phase::Fno => train_fno_phase(&cfg, &ds, &out, physics, seed, epochs),
                Phase::Ivnet => train_ivnet_phase(&cfg, &ds, &out, seed, epochs, fno.as_deref(), map_source),
            }
        }
        Command::Eval { data, fno, ivnet, out } => eval(&data, &fno, &ivnet, &out),
        Command::Compare {
            data,
            out,
            seeds,
            epochs,
        } => compare(&cfg, &data, &out, seeds, epochs),
        Command::Predict {
            thzo,
            temp,
            tau,
            models,
            out,
            maps,
        } => predict(DeviceParams::new(thzo, temp, tau), &models, &out, maps.as_deref()),
        Command::Sweep {
            vary,
            from,
            to,
            n,
            thzo,
            temp,
            tau,
            models,
            out,
        } => sweep(vary.into(), from, to, n, DeviceParams::new(thzo, temp, tau), &models, &out),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Serve {
            host,
            port,
            fno,
            ivnet,
            static_dir,
        } => serve(&host, port, &fno, &ivnet, static_dir.as_deref()),
    }
}

fn generate(cfg: &CliConfig, out: &Path, grid: Option<usize>, holdout: bool, workers: Option<usize>) -> Result<()> {
    let grid = GridSpec::square(grid.unwrap_or(cfg.grid));
    let mut specs = vec![SweepSpec::table()];
    if holdout {
        specs.extend(SweepSpec::holdout());
    }
    let start = std::time::Instant::now();
    let ds = generate_sweep(&grid, &cfg.oracle, &specs, out, workers.unwrap_or(cfg.workers))?;
    let m = &ds.manifest;
    print(json!({
        "dataset": out,
        "samples": m.samples.len(),
        "failures": m.failures.len(),
        "config_hash": m.config_hash,
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn train_fno_phase(cfg: &CliConfig, ds: &Dataset, out: &Path, physics: Switch, seed: Option<u64>, epochs: Option<usize>) -> Result<()> {
    let mut spec = cfg.fno.clone();
    spec.weights = match physics {
        Switch::Off => LossWeights::data_only(),
        Switch::On if spec.weights.is_physics_informed() => spec.weights,
        Switch::On => LossWeights::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(e) = epochs {
        spec.optim.epochs = e;
    }
    let start = std::time::Instant::now();
    let run = train_fno(ds, &spec, &mut |r| {
        tracing::info!(epoch = r.epoch, lr = r.lr, data = r.data, poisson = r.poisson, mono = r.mono, "fno");
    });
    let run = save_last_good(run, out)?;
    run.model.save(out)?;
    let last = run.history.last();
    print(json!({
        "checkpoint": out,
        "epochs": run.history.len(),
        "final": last,
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

/// On divergence keeps the last finite parameters next to `out`.
fn save_last_good<T>(r: fefet_core::Result<T>, out: &Path) -> Result<T> {
    match r {
        Err(Error::Diverged { epoch, reason, last_good }) => {
            let path = out.with_extension("diverged.few");
            std::fs::write(&path, &*last_good).with_context(|| format!("writing {}", path.display()))?;
            Err(Error::Diverged {
                epoch,
                reason: format!("{reason}; last finite weights in {}", path.display()),
                last_good,
            }
            .into())
        }
        other => Ok(other?),
    }
}

fn train_ivnet_phase(
    cfg: &CliConfig,
    ds: &Dataset,
    out: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    fno: Option<&Path>,
    source: Option<Source>,
) -> Result<()> {
    let mut spec = cfg.ivnet.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(e) = epochs {
        spec.optim.epochs = e;
    }
    if let Some(s) = source {
        spec.map_source = match s {
            Source::Fno => MapSource::Fno,
            Source::Oracle => MapSource::Oracle,
        };
    }
    let fno = match (spec.map_source, fno) {
        (MapSource::Fno, Some(p)) => Some(FnoModel::load(p)?),
        (MapSource::Fno, None) => return Err(Error::Usage("--fno is required when the IV readout trains on FNO maps".into()).into()),
        (MapSource::Oracle, _) => None,
    };
    let start = std::time::Instant::now();
    let run = train_ivnet(ds, fno.as_ref(), &spec, &mut |r| {
        if r.epoch % 10 == 0 {
            tracing::info!(epoch = r.epoch, lr = r.lr, loss = r.loss, "ivnet");
        }
    });
    let run = save_last_good(run, out)?;
    run.model.save(out)?;
    print(json!({
        "checkpoint": out,
        "epochs": run.history.len(),
        "final_loss": run.history.last().map(|r| r.loss),
        "seconds": start.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn load_predictor(fno: &Path, ivnet: &Path) -> Result<Predictor> {
    let f = FnoModel::load(fno).with_context(|| format!("loading {}", fno.display()))?;
    let i = IvNetModel::load(ivnet).with_context(|| format!("loading {}", ivnet.display()))?;
    Ok(Predictor::new(f, i)?)
}

fn eval(data: &Path, fno: &Path, ivnet: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::open(data)?;
    let p = load_predictor(fno, ivnet)?;
    let report = evaluate(&ds, &p)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.write_json(&out.join("report.json"))?;
    report.write_samples_csv(&out.join("samples.csv"))?;
    report.write_curves_csv(&out.join("curves.csv"))?;
    let split = |s: &SplitMetrics| {
        json!({
            "samples": s.samples,
            "vth_r2": s.vth_r2,
            "vth_rmse_v": s.vth_rmse_v,
            "vth_failures": s.vth_failures,
            "iv_rmse_dec": s.iv_rmse,
            "max_channel_rel_err": s.max_channel_rel_err(),
        })
    };
    print(json!({
        "out": out,
        "seen": split(&report.seen),
        "holdout": report.holdout.as_ref().map(split),
        "mean_latency_ms": report.inference.mean_ms,
    }));
    Ok(())
}

fn compare(cfg: &CliConfig, data: &Path, out: &Path, seeds: Option<Vec<u64>>, epochs: Option<usize>) -> Result<()> {
    let ds = Dataset::open(data)?;
    let mut spec = cfg.compare.clone();
    if let Some(s) = seeds {
        spec.seeds = s;
    }
    if let Some(e) = epochs {
        spec.budget.optim.epochs = e;
    }
    let report = compare_physics(&ds, &spec, &mut |m| tracing::info!("{m}"))?;
    let bytes = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    print(json!({
        "out": out,
        "baseline_mean_iv_rmse": report.baseline.mean_iv_rmse,
        "physics_mean_iv_rmse": report.physics.mean_iv_rmse,
        "baseline_mean_map_rmse": report.baseline.mean_map_rmse,
        "physics_mean_map_rmse": report.physics.mean_map_rmse,
        "rmse_improvement_pct": report.rmse_improvement_pct,
        "physics_not_worse": report.physics_not_worse,
        "physics_zero_violations": report.physics_zero_violations,
    }));
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn write_iv_csv(path: &Path, vg: &[f64], id: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "v_g_v,log10_id_a")?;
    for (v, i) in vg.iter().zip(id) {
        writeln!(f, "{v},{i:.9}")?;
    }
    f.flush()?;
    Ok(())
}

fn predict(params: DeviceParams, models: &Models, out: &Path, maps: Option<&Path>) -> Result<()> {
    if let Some(url) = &models.server {
        if maps.is_some() {
            return Err(Error::Usage("--maps needs local checkpoints; the service only returns pooled maps".into()).into());
        }
        let req = PredictRequest {
            t_hzo_nm: params.t_hzo,
            temp_k: params.temp,
            tau_s: params.tau,
            include_maps: false,
        };
        let r = runtime()?.block_on(Client::new(url).predict(&req))?;
        write_iv_csv(out, &r.vg, &r.id_log10)?;
        print(json!({ "vth_v": r.vth_v, "extrapolated": r.extrapolated, "latency_ms": r.latency_ms, "iv_csv": out }));
        return Ok(());
    }
    let p = load_predictor(&models.fno, &models.ivnet)?;
    let pred = p.predict_batch(&[params])?.pop().expect("one prediction");
    write_iv_csv(out, &pred.iv.v_g, &pred.iv.log10_id)?;
    if let Some(path) = maps {
        FefFile::from_bundle(&pred.maps).write(path)?;
    }
    let vth = pred.vth()?;
    print(json!({
        "vth_v": vth,
        "extrapolated": pred.extrapolated,
        "latency_ms": pred.latency.as_secs_f64() * 1e3,
        "iv_csv": out,
        "maps": maps,
    }));
    Ok(())
}

fn sweep(vary: SweepVar, from: Option<f64>, to: Option<f64>, n: usize, fixed: DeviceParams, models: &Models, out: &Path) -> Result<()> {
    let (lo, hi) = vary.default_range();
    let (from, to) = (from.unwrap_or(lo), to.unwrap_or(hi));
    let rows = match &models.server {
        Some(url) => {
            let values = sweep_points(vary, from, to, n)?;
            let client = Client::new(url);
            runtime()?.block_on(async {
                let mut rows = Vec::with_capacity(values.len());
                for v in values {
                    let d = vary.set(fixed, v);
                    let req = PredictRequest {
                        t_hzo_nm: d.t_hzo,
                        temp_k: d.temp,
                        tau_s: d.tau,
                        include_maps: false,
                    };
                    let vth_v = match client.predict(&req).await {
                        Ok(r) => Some(r.vth_v),
                        Err(ClientError::Api { status: 422, .. }) => None,
                        Err(e) => return Err(e),
                    };
                    rows.push(SweepRow {
                        value: v,
                        vth_v,
                        extrapolated: d.is_extrapolated(),
                    });
                }
                Ok(rows)
            })?
        }
        None => run_sweep(&load_predictor(&models.fno, &models.ivnet)?, vary, fixed, from, to, n)?,
    };
    export_sweep_csv(&rows, vary, out)?;
    print(json!({
        "csv": out,
        "rows": rows.len(),
        "extrapolated": rows.iter().filter(|r| r.extrapolated).count(),
        "extraction_failures": rows.iter().filter(|r| r.vth_v.is_none()).count(),
    }));
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let reports: [(&str, GradCheckReport); 2] = [("fno", fno_gradcheck(seed)?), ("ivnet", ivnet_gradcheck(seed)?)];
    let mut ok = true;
    for (net, r) in &reports {
        for t in &r.tensors {
            println!("{net:6} {:28} checked {:3} max {:.3e} median {:.3e}", t.name, t.checked, t.max_rel_err, t.median_rel_err);
        }
        let pass = gradcheck_passes(r);
        ok &= pass;
        println!(
            "{net:6} max {:.3e} (< {GRADCHECK_MAX_REL:e}) median {:.3e} (< {GRADCHECK_MEDIAN_REL:e}) {}",
            r.max_rel_err(),
            r.median_rel_err(),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        anyhow::bail!("gradient check failed")
    }
}

fn serve(host: &str, port: u16, fno: &Path, ivnet: &Path, static_dir: Option<&Path>) -> Result<()> {
    let state = Arc::new(ServiceState::new(load_predictor(fno, ivnet)?));
    let app = fefet_server::router(state, static_dir);
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("binding {host}:{port}"))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        fefet_server::serve(listener, app, fefet_server::shutdown_signal()).await?;
        Ok(())
    })
}
