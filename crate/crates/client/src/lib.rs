//! Typed client for the inference service.

use fefet_core::interface::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),

    /// Non-2xx response with the service's error body.
    #[error("{status} {kind}: {message}")]
    Api { status: u16, kind: String, message: String },

    #[error("service speaks schema {found}, client expects {SCHEMA_VERSION}")]
    Schema { found: u32 },

    #[error("bad response body: {0}")]
    Body(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

#[derive(serde::Deserialize)]
struct Version {
    schema_version: u32,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            let (kind, message) = match serde_json::from_slice::<ErrorResponse>(&bytes) {
                Ok(e) => (e.kind, e.error),
                Err(_) => ("unknown".into(), String::from_utf8_lossy(&bytes).into_owned()),
            };
            return Err(ClientError::Api {
                status: status.as_u16(),
                kind,
                message,
            });
        }
        let v: Version = serde_json::from_slice(&bytes)?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(ClientError::Schema { found: v.schema_version });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.get("/api/health").await
    }

    pub async fn meta(&self) -> Result<MetaResponse> {
        self.get("/api/meta").await
    }

    pub async fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        self.post("/api/predict", req).await
    }

    pub async fn retention(&self, req: &RetentionRequest) -> Result<RetentionResponse> {
        self.post("/api/retention", req).await
    }
}
