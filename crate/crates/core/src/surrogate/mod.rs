//! Neural-operator surrogate: scalar embedding, lifting, the Fourier neural
//! operator, its data and physics losses, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod fno;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Activation, FnoConfig, LossWeights, OptimConfig, N_INPUTS, N_OUTPUTS};
pub use fno::{fno_forward, fno_plan, init_fno, lift_inputs};
pub use loss::{
    aggregates_graph, count_mono_violations, loss_data, loss_mono, loss_poisson, mono_pairs, mono_penalty,
    PhysicsScales, SampleGeometry,
};
pub use model::{bundle_from_maps, FnoMeta, FnoModel, FNO_KIND};
pub use optim::Adam;
pub use train::{physics_scales, train_fno, EpochRecord, FnoRun, FnoTrainSpec};
