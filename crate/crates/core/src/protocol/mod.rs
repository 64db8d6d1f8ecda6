//! HTTP + JSON model-evaluation protocol: message types, codec, a model
//! server and a client.
//!
//! Endpoints (all bodies JSON):
//!
//! | method | path            | request        | response                         |
//! |--------|-----------------|----------------|----------------------------------|
//! | GET    | `/info`         | none           | `{protocol_version, models}`     |
//! | POST   | `/input-sizes`  | `{name, config}` | `{input_sizes}`                |
//! | POST   | `/output-sizes` | `{name, config}` | `{output_sizes}`               |
//! | POST   | `/model-info`   | `{name, config}` | `{support}`                    |
//! | POST   | `/evaluate`     | `{name, input, config}` | `{output}` or `{error}` |
//!
//! Derivative endpoints exist and always answer `NotSupported`.

mod client;
mod codec;
mod server;
mod types;

pub use client::{
    client_evaluate, health_check, Health, HttpModel, RawReply, Timed, Transport, UnhealthyReason,
};
pub(crate) use codec::encode;
pub use codec::{decode, decode_request, decode_response, encode_request, encode_response};
pub use server::{
    default_port, serve_model, serve_models, Model, ModelError, ServeOptions, ServerHandle,
    ServerStats,
};
pub(crate) use server::{error_reply, json_reply, serve_router};
pub use types::{
    codes, Config, ConfigValue, ErrorBody, EvaluationRequest, EvaluationResponse, Features,
    InfoResponse, InputSizesResponse, ModelDescriptor, ModelInfoResponse, ModelQuery,
    OutputSizesResponse, PROTOCOL_VERSION,
};

use std::time::Duration;

/// Header carrying the server-side evaluation time in decimal seconds.
pub const COMPUTE_TIME_HEADER: &str = "x-compute-time";

/// Default listen port when `PORT` is not set.
pub const DEFAULT_PORT: u16 = 4242;

/// Default health-check timeout.
pub const HEALTH_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed body: {0}")]
    MalformedBody(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("{0} is not supported")]
    NotSupported(&'static str),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("request timed out")]
    Timeout,
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProtocolError {
    /// Error code used when this error is sent over the wire.
    pub fn code(&self) -> &str {
        match self {
            ProtocolError::MalformedBody(_) => codes::MALFORMED_BODY,
            ProtocolError::SchemaViolation(_) => codes::SCHEMA_VIOLATION,
            ProtocolError::UnknownModel(_) => codes::UNKNOWN_MODEL,
            ProtocolError::NotSupported(_) => codes::NOT_SUPPORTED,
            ProtocolError::Remote { code, .. } => code,
            _ => codes::EVALUATION_FAILED,
        }
    }
}
