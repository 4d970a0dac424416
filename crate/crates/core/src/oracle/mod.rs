//! Reduced-order 2D retention simulator for a double-HZO FeFET gate stack.
//!
//! The device is a lateral 2D slice: silicon substrate and channel, two HZO
//! layers separated by a tunnel dielectric, and a grounded gate. Starting
//! from the erased state, trapped screening charge decays thermally and the
//! polarization relaxes under its own depolarization field. Each stored
//! state yields five physics maps, a transfer curve and a threshold voltage.

pub mod config;
pub mod geometry;
pub mod iv;
pub mod poisson;
pub mod retention;
pub mod simulate;
pub mod state;

pub use config::{DeviceParams, OracleConfig, ThicknessMode};
pub use geometry::{build_geometry, Geometry, LayerRows, Masks};
pub use iv::{compute_current_map, compute_iv, drain_current, extract_vth, internal_vth, IvCurve};
pub use poisson::{solve_poisson, surface_potential, PoissonSolution};
pub use retention::step_retention;
pub use simulate::{simulate, FieldBundle, Snapshot, Trajectory, CHANNEL_NAMES, TABLE_TAUS};
pub use state::{compute_aggregates, init_ers_state, reference_state, Aggregates, OracleState};
