//! Small trained model pair for service tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fefet_core::dataset::{generate_sweep, Split, SweepSpec};
use fefet_core::numerics::GridSpec;
use fefet_core::oracle::{OracleConfig, TABLE_TAUS};
use fefet_core::readout::{train_ivnet, IvNetConfig, IvTrainSpec, MapSource};
use fefet_core::surrogate::{train_fno, FnoConfig, FnoTrainSpec, LossWeights, OptimConfig};

/// Trains a toy FNO and IV-Net at 32x32 and writes `fno.few` / `ivnet.few`
/// into `dir`.
pub fn toy_checkpoints(dir: &Path) -> (PathBuf, PathBuf) {
    let specs: Vec<SweepSpec> = [(5.0, 300.0), (9.0, 473.0), (7.0, 400.0)]
        .iter()
        .enumerate()
        .map(|(i, &(t, temp))| SweepSpec {
            name: format!("s{i}"),
            t_hzo: vec![t],
            temp: vec![temp],
            taus: TABLE_TAUS.to_vec(),
            split: Split::Seen,
        })
        .collect();
    let ds = generate_sweep(&GridSpec::square(32), &OracleConfig::default(), &specs, &dir.join("data"), 1).unwrap();
    let fno_spec = FnoTrainSpec {
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
            epochs: 40,
            ..Default::default()
        },
        seed: 0,
    };
    let fno = train_fno(&ds, &fno_spec, &mut |_| {}).unwrap().model;
    let iv_spec = IvTrainSpec {
        ivnet: IvNetConfig {
            encoder_channels: vec![8, 16],
            scalar_hidden: vec![16, 16],
            head_hidden: 32,
            ..Default::default()
        },
        optim: OptimConfig {
            epochs: 100,
            lr: 3e-3,
            ..Default::default()
        },
        batch_size: 6,
        seed: 0,
        map_source: MapSource::Fno,
    };
    let iv = train_ivnet(&ds, Some(&fno), &iv_spec, &mut |_| {}).unwrap().model;
    let (f, i) = (dir.join("fno.few"), dir.join("ivnet.few"));
    fno.save(&f).unwrap();
    iv.save(&i).unwrap();
    (f, i)
}
