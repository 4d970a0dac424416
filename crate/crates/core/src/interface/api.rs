//! Request and response bodies. Every response carries [`SCHEMA_VERSION`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest map side sent over HTTP; larger maps are mean-pooled.
pub const MAX_MAP_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema_version: u32,
    pub status: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderRanges {
    pub t_hzo_nm: Range,
    pub temp_k: Range,
    pub tau_s: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub schema_version: u32,
    pub ranges: SliderRanges,
    pub vg: Vec<f64>,
    pub channel_names: Vec<String>,
    /// Prediction grid (maps are pooled from this down to at most 64 per side).
    pub nx: usize,
    pub ny: usize,
    /// Drain current defining V_th, A.
    pub i_crit: f64,
    pub fno_physics_informed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub t_hzo_nm: f64,
    pub temp_k: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub include_maps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPayload {
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `y` fastest.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema_version: u32,
    pub vth_v: f64,
    pub vg: Vec<f64>,
    pub id_log10: Vec<f64>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maps: Option<BTreeMap<String, MapPayload>>,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionRequest {
    pub t_hzo_nm: f64,
    pub temp_k: f64,
    pub tau_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionResponse {
    pub schema_version: u32,
    pub tau: Vec<f64>,
    /// `V_th(tau) - V_th(0)`, V.
    pub dvth_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub schema_version: u32,
    /// Short machine-readable class, e.g. `bad_request`, `extraction`.
    pub kind: String,
    pub error: String,
}

impl ErrorResponse {
    pub fn new(kind: &str, error: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            error: error.into(),
        }
    }
}
