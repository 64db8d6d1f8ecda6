//! Byte-level encoding of protocol messages.
//!
//! Bodies are JSON objects. Maps are ordered, so encoding is deterministic.
//! Decoding separates two failure classes: bytes that are not JSON at all
//! ([`ProtocolError::MalformedBody`]) and JSON that does not fit the schema
//! ([`ProtocolError::SchemaViolation`]).

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{validate_vectors, EvaluationRequest, EvaluationResponse};
use super::ProtocolError;

pub fn encode_request(req: &EvaluationRequest) -> Vec<u8> {
    encode(req)
}

pub fn decode_request(bytes: &[u8]) -> Result<EvaluationRequest, ProtocolError> {
    let req: EvaluationRequest = decode(bytes)?;
    req.validate()?;
    Ok(req)
}

pub fn encode_response(resp: &EvaluationResponse) -> Vec<u8> {
    encode(resp)
}

pub fn decode_response(bytes: &[u8]) -> Result<EvaluationResponse, ProtocolError> {
    let resp: EvaluationResponse = decode(bytes)?;
    if let EvaluationResponse::Output { output } = &resp {
        validate_vectors("output", output)?;
    }
    Ok(resp)
}

pub(crate) fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    // Protocol types hold only strings, finite floats and ordered maps.
    serde_json::to_vec(value).expect("protocol values always serialize")
}

/// Generic two-stage decode shared by every message type.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ProtocolError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::MalformedBody(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| ProtocolError::SchemaViolation(e.to_string()))
}
