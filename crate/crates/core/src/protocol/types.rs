use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// Version reported by `GET /info`.
pub const PROTOCOL_VERSION: f64 = 1.0;

/// Opaque per-request configuration, forwarded verbatim to the model.
pub type Config = BTreeMap<String, ConfigValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl From<f64> for ConfigValue {
    fn from(v: f64) -> Self {
        ConfigValue::Number(v)
    }
}

impl From<bool> for ConfigValue {
    fn from(v: bool) -> Self {
        ConfigValue::Bool(v)
    }
}

impl From<&str> for ConfigValue {
    fn from(v: &str) -> Self {
        ConfigValue::Text(v.to_owned())
    }
}

/// Capabilities a model advertises. Only `evaluate` is ever served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub evaluate: bool,
    pub gradient: bool,
    pub apply_jacobian: bool,
    pub apply_hessian: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            evaluate: true,
            gradient: false,
            apply_jacobian: false,
            apply_hessian: false,
        }
    }
}

/// Name and shape of a model `F: R^n -> R^m`, where the input and output
/// are split into one or more vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub input_sizes: Vec<usize>,
    pub output_sizes: Vec<usize>,
    #[serde(default)]
    pub features: Features,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, input_sizes: Vec<usize>, output_sizes: Vec<usize>) -> Self {
        ModelDescriptor {
            name: name.into(),
            input_sizes,
            output_sizes,
            features: Features::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.name.is_empty() {
            return Err(ProtocolError::SchemaViolation("model name is empty".into()));
        }
        for (what, sizes) in [
            ("input_sizes", &self.input_sizes),
            ("output_sizes", &self.output_sizes),
        ] {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(ProtocolError::SchemaViolation(format!(
                    "{what} must be non-empty with entries >= 1, got {sizes:?}"
                )));
            }
        }
        Ok(())
    }

    /// Checks that `inputs` has exactly the advertised shape.
    pub fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<(), ProtocolError> {
        check_shape("input", &self.input_sizes, inputs)
    }

    pub fn check_outputs(&self, outputs: &[Vec<f64>]) -> Result<(), ProtocolError> {
        check_shape("output", &self.output_sizes, outputs)
    }
}

fn check_shape(what: &str, sizes: &[usize], vectors: &[Vec<f64>]) -> Result<(), ProtocolError> {
    let shape: Vec<usize> = vectors.iter().map(Vec::len).collect();
    if shape != sizes {
        return Err(ProtocolError::SchemaViolation(format!(
            "{what} shape {shape:?} does not match expected {sizes:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    #[serde(rename = "name")]
    pub model_name: String,
    #[serde(rename = "input")]
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub config: Config,
}

impl EvaluationRequest {
    pub fn new(model_name: impl Into<String>, inputs: Vec<Vec<f64>>) -> Self {
        EvaluationRequest {
            model_name: model_name.into(),
            inputs,
            config: Config::new(),
        }
    }

    /// Type-level invariants that hold independently of any model.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.model_name.is_empty() {
            return Err(ProtocolError::SchemaViolation("`name` is empty".into()));
        }
        validate_vectors("input", &self.inputs)?;
        for (key, value) in &self.config {
            if let ConfigValue::Number(v) = value {
                if !v.is_finite() {
                    return Err(ProtocolError::SchemaViolation(format!(
                        "config `{key}` is not finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_vectors(what: &str, vectors: &[Vec<f64>]) -> Result<(), ProtocolError> {
    if vectors.is_empty() {
        return Err(ProtocolError::SchemaViolation(format!(
            "`{what}` holds no vectors"
        )));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.is_empty() {
            return Err(ProtocolError::SchemaViolation(format!(
                "`{what}[{i}]` is empty"
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ProtocolError::SchemaViolation(format!(
                "`{what}[{i}]` contains NaN or Inf"
            )));
        }
    }
    Ok(())
}

/// Structured error carried in a response body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvaluationResponse {
    Output { output: Vec<Vec<f64>> },
    Error { error: ErrorBody },
}

impl EvaluationResponse {
    pub fn ok(output: Vec<Vec<f64>>) -> Self {
        EvaluationResponse::Output { output }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        EvaluationResponse::Error {
            error: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    pub fn into_result(self) -> Result<Vec<Vec<f64>>, ProtocolError> {
        match self {
            EvaluationResponse::Output { output } => Ok(output),
            EvaluationResponse::Error { error } => Err(ProtocolError::Remote {
                code: error.code,
                message: error.message,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub protocol_version: f64,
    pub models: Vec<String>,
}

/// Body of the size and model-info queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelQuery {
    pub name: String,
    #[serde(default)]
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSizesResponse {
    pub input_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSizesResponse {
    pub output_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfoResponse {
    pub support: Features,
}

/// Error codes used in [`ErrorBody::code`].
pub mod codes {
    pub const MALFORMED_BODY: &str = "MalformedBody";
    pub const SCHEMA_VIOLATION: &str = "SchemaViolation";
    pub const UNKNOWN_MODEL: &str = "UnknownModel";
    pub const NOT_SUPPORTED: &str = "NotSupported";
    pub const EVALUATION_FAILED: &str = "EvaluationFailed";
    pub const INVALID_OUTPUT: &str = "InvalidOutput";
    pub const UPSTREAM_FAILURE: &str = "UpstreamFailure";
    pub const NO_CAPACITY: &str = "NoCapacity";
}
