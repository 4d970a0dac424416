//! Sweep generation, on-disk formats, normalization and trajectory loading.

pub mod container;
pub mod generate;
pub mod loader;
pub mod manifest;
pub mod norm;

pub use container::FefFile;
pub use generate::{generate_sweep, seen_norm_stats};
pub use loader::{load_trajectory_batch, BatchSample, TrajectoryBatch, TrajectoryGroup};
pub use manifest::{
    config_hash, sha256_hex, trajectory_id, Dataset, FailureRecord, Manifest, SampleRecord, Split, SweepSpec, TrajectoryInfo,
    TABLE_TEMPS, TABLE_T_HZO,
};
pub use norm::{time_embed, ChannelStats, NormStats, ScalarRange, J_CHANNEL};
