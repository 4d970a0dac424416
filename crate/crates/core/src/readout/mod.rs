//! Readout stage: IV-Net from maps to transfer curves, end-to-end
//! prediction, evaluation metrics and the physics-loss comparison harness.

pub mod compare;
pub mod config;
pub mod gradcheck;
pub mod ivnet;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod sweep;
pub mod train;

pub use compare::{bracket_check, compare_physics, holdout_score, BracketCurve, CompareSpec, ComparisonReport, HoldoutScore};
pub use gradcheck::{fno_gradcheck, gradcheck_passes, ivnet_gradcheck, GRADCHECK_MAX_REL, GRADCHECK_MEDIAN_REL};
pub use config::{IvNetConfig, IvTrainSpec, MapSource, MAP_CHANNELS, N_SCALARS};
pub use ivnet::{init_ivnet, ivnet_forward, IvOutput, OutputScale};
pub use metrics::{evaluate, iv_mono_violations, pearson, r_squared, MetricsReport, SplitMetrics, MONO_REL_TOL};
pub use model::{IvNetMeta, IvNetModel, IVNET_KIND};
pub use predict::{stack_base_potential, Prediction, Predictor};
pub use sweep::{export_sweep_csv, run_sweep, sweep_points, write_sweep_csv, SweepRow, SweepVar};
pub use train::{iv_examples, train_ivnet, IvEpochRecord, IvExample, IvRun};
