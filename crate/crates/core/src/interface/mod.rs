//! HTTP/JSON inference API shared by the service and its client: wire types,
//! map pooling and the handlers' model-side logic.

pub mod api;
pub mod pool;
pub mod service;

pub use api::*;
pub use pool::mean_pool;
pub use service::{error_status, ServiceState};
