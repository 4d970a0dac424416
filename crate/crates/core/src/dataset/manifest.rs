//! Dataset manifest (`manifest.json`) and the sweep specification.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::FefFile;
use super::norm::NormStats;
use crate::error::{Error, Result};
use crate::numerics::grid::GridSpec;
use crate::oracle::{Aggregates, DeviceParams, FieldBundle, IvCurve, OracleConfig, TABLE_TAUS};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Table I thickness and temperature axes.
pub const TABLE_T_HZO: [f64; 5] = [5.0, 6.0, 7.0, 8.0, 9.0];
pub const TABLE_TEMPS: [f64; 4] = [300.0, 358.0, 400.0, 473.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Holdout,
}

/// Cartesian product of thicknesses and temperatures, each simulated through
/// `taus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub t_hzo: Vec<f64>,
    pub temp: Vec<f64>,
    pub taus: Vec<f64>,
    pub split: Split,
}

impl SweepSpec {
    /// The 5 x 4 x 6 training sweep.
    pub fn table() -> Self {
        Self {
            name: "table".into(),
            t_hzo: TABLE_T_HZO.to_vec(),
            temp: TABLE_TEMPS.to_vec(),
            taus: TABLE_TAUS.to_vec(),
            split: Split::Seen,
        }
    }

    /// Held-out conditions: an unseen temperature at every thickness, an
    /// unseen thickness at every temperature, and an unseen retention time on
    /// every seen device.
    pub fn holdout() -> Vec<Self> {
        let mut taus = TABLE_TAUS.to_vec();
        taus.insert(4, 300.0);
        vec![
            Self {
                name: "unseen-temp".into(),
                t_hzo: TABLE_T_HZO.to_vec(),
                temp: vec![350.0],
                taus: taus.clone(),
                split: Split::Holdout,
            },
            Self {
                name: "unseen-thickness".into(),
                t_hzo: vec![6.5],
                temp: TABLE_TEMPS.to_vec(),
                taus,
                split: Split::Holdout,
            },
            Self {
                name: "unseen-tau".into(),
                t_hzo: TABLE_T_HZO.to_vec(),
                temp: TABLE_TEMPS.to_vec(),
                taus: vec![300.0],
                split: Split::Holdout,
            },
        ]
    }
}

/// Trajectory identifier shared by all samples of one simulated device.
pub fn trajectory_id(spec: &str, t_hzo: f64, temp: f64) -> String {
    format!("{spec}/t{t_hzo}-T{temp}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub trajectory: String,
    pub params: DeviceParams,
    pub split: Split,
    /// Field container path relative to the dataset directory.
    pub file: String,
    pub iv: IvCurve,
    pub vth: f64,
    pub vth_internal: f64,
    pub phi_s: f64,
    pub aggregates: Aggregates,
    /// Poisson residual certificate of the double-precision state.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub trajectory: String,
    pub t_hzo: f64,
    pub temp: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub grid: GridSpec,
    pub oracle_config: OracleConfig,
    /// Hex SHA-256 of the canonical JSON of `(grid, oracle_config)`.
    pub config_hash: String,
    pub specs: Vec<SweepSpec>,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<FailureRecord>,
    /// Statistics of the seen split; absent when it cannot be normalized
    /// (for example a single-device sweep).
    pub norm_stats: Option<NormStats>,
}

pub fn config_hash(grid: &GridSpec, config: &OracleConfig) -> String {
    let json = serde_json::to_vec(&(grid, config)).expect("config serializes");
    sha256_hex(&json)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One trajectory: sample indices sorted by retention time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryInfo {
    pub id: String,
    pub split: Split,
    pub t_hzo: f64,
    pub temp: f64,
    pub samples: Vec<usize>,
}

impl Manifest {
    pub fn verify_config_hash(&self) -> Result<()> {
        let expected = config_hash(&self.grid, &self.oracle_config);
        if expected != self.config_hash {
            return Err(Error::Format(format!(
                "config hash mismatch: manifest records {}, config hashes to {expected}",
                self.config_hash
            )));
        }
        Ok(())
    }

    /// Trajectories in order of first appearance.
    pub fn trajectories(&self) -> Vec<TrajectoryInfo> {
        let mut out: Vec<TrajectoryInfo> = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            match out.iter_mut().find(|t| t.id == s.trajectory) {
                Some(t) => t.samples.push(i),
                None => out.push(TrajectoryInfo {
                    id: s.trajectory.clone(),
                    split: s.split,
                    t_hzo: s.params.t_hzo,
                    temp: s.params.temp,
                    samples: vec![i],
                }),
            }
        }
        for t in &mut out {
            t.samples
                .sort_by(|&a, &b| self.samples[a].params.tau.total_cmp(&self.samples[b].params.tau));
        }
        out
    }

    pub fn trajectories_in(&self, split: Split) -> Vec<TrajectoryInfo> {
        self.trajectories().into_iter().filter(|t| t.split == split).collect()
    }

    pub fn sample_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                manifest.format_version
            )));
        }
        manifest.verify_config_hash()?;
        Ok(Self { root, manifest })
    }

    pub fn save_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn sample_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.manifest.samples[index].file)
    }

    /// Stored maps of one sample, widened from `f32`.
    pub fn load_bundle(&self, index: usize) -> Result<FieldBundle> {
        let path = self.sample_path(index);
        let file = FefFile::read(&path).map_err(|e| match e {
            Error::Io { source, .. } => Error::Io {
                path: PathBuf::from(format!("{} (sample {})", path.display(), self.manifest.samples[index].id)),
                source,
            },
            other => other,
        })?;
        file.to_bundle(self.manifest.grid)
    }

    pub fn norm_stats(&self) -> Result<&NormStats> {
        self.manifest
            .norm_stats
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no normalization statistics (seen split too narrow?)".into()))
    }

    pub fn trajectory(&self, id: &str) -> Result<TrajectoryInfo> {
        self.manifest
            .trajectories()
            .into_iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Usage(format!("unknown trajectory {id}")))
    }
}
