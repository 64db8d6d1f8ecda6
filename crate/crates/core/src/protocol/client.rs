use std::time::Duration;

use bytes::Bytes;
use serde::de::DeserializeOwned;

use super::codec::{decode, decode_response, encode, encode_request};
use super::types::{
    Config, EvaluationRequest, Features, InfoResponse, InputSizesResponse, ModelDescriptor,
    ModelInfoResponse, ModelQuery, OutputSizesResponse,
};
use super::{ProtocolError, COMPUTE_TIME_HEADER, HEALTH_TIMEOUT};

/// Raw HTTP access to a protocol server, shared by the typed client and
/// the balancer's forwarding path.
#[derive(Debug, Clone)]
pub struct Transport {
    http: reqwest::Client,
}

/// An upstream reply as received, before decoding.
#[derive(Debug, Clone)]
pub struct RawReply {
    pub status: u16,
    pub body: Bytes,
    /// Server-reported evaluation time, when present.
    pub compute: Option<Duration>,
}

impl Default for Transport {
    fn default() -> Self {
        Transport::new()
    }
}

impl Transport {
    pub fn new() -> Self {
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(2))
            .tcp_nodelay(true)
            .build()
            .expect("reqwest client builds with static settings");
        Transport { http }
    }

    pub async fn get(
        &self,
        base: &str,
        path: &str,
        timeout: Duration,
    ) -> Result<RawReply, ProtocolError> {
        let req = self.http.get(join(base, path)).timeout(timeout);
        Self::send(req).await
    }

    pub async fn post(
        &self,
        base: &str,
        path: &str,
        body: Vec<u8>,
        timeout: Duration,
    ) -> Result<RawReply, ProtocolError> {
        let req = self
            .http
            .post(join(base, path))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .timeout(timeout);
        Self::send(req).await
    }

    async fn send(req: reqwest::RequestBuilder) -> Result<RawReply, ProtocolError> {
        let resp = req.send().await.map_err(map_reqwest)?;
        let status = resp.status().as_u16();
        let compute = resp
            .headers()
            .get(COMPUTE_TIME_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = resp.bytes().await.map_err(map_reqwest)?;
        Ok(RawReply {
            status,
            body,
            compute,
        })
    }
}

fn map_reqwest(e: reqwest::Error) -> ProtocolError {
    if e.is_timeout() {
        ProtocolError::Timeout
    } else {
        ProtocolError::Unreachable(error_chain(&e))
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut text = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        text.push_str(": ");
        text.push_str(&s.to_string());
        source = s.source();
    }
    text
}

/// Normalizes `host:port` or a full URL into a base URL without a trailing
/// slash.
pub(crate) fn base_url(url: &str) -> String {
    let url = url.trim().trim_end_matches('/');
    if url.starts_with("http://") || url.starts_with("https://") {
        url.to_owned()
    } else {
        format!("http://{url}")
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}{}", base_url(base), path)
}

fn decode_reply<T: DeserializeOwned>(reply: &RawReply) -> Result<T, ProtocolError> {
    if (200..300).contains(&reply.status) {
        decode(&reply.body)
    } else {
        Err(remote_error(reply))
    }
}

fn remote_error(reply: &RawReply) -> ProtocolError {
    match decode_response(&reply.body) {
        Ok(resp) => match resp.into_result() {
            Err(e) => e,
            Ok(_) => {
                ProtocolError::MalformedBody(format!("status {} with an output body", reply.status))
            }
        },
        Err(_) => ProtocolError::MalformedBody(format!(
            "status {}: {}",
            reply.status,
            String::from_utf8_lossy(&reply.body)
        )),
    }
}

/// Outputs of one evaluation together with the server-reported compute
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct Timed {
    pub outputs: Vec<Vec<f64>>,
    pub compute: Option<Duration>,
}

/// Client handle for one named model behind a protocol server (or a
/// balancer, which speaks the same protocol).
#[derive(Debug, Clone)]
pub struct HttpModel {
    transport: Transport,
    base: String,
    name: String,
    timeout: Duration,
}

impl HttpModel {
    pub fn new(url: &str, name: impl Into<String>) -> Self {
        HttpModel {
            transport: Transport::new(),
            base: base_url(url),
            name: name.into(),
            timeout: Duration::from_secs(600),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    pub async fn info(&self) -> Result<InfoResponse, ProtocolError> {
        let reply = self
            .transport
            .get(&self.base, "/info", self.timeout)
            .await?;
        decode_reply(&reply)
    }

    fn query(&self, config: &Config) -> Vec<u8> {
        encode(&ModelQuery {
            name: self.name.clone(),
            config: config.clone(),
        })
    }

    pub async fn input_sizes(&self, config: &Config) -> Result<Vec<usize>, ProtocolError> {
        let reply = self
            .transport
            .post(&self.base, "/input-sizes", self.query(config), self.timeout)
            .await?;
        Ok(decode_reply::<InputSizesResponse>(&reply)?.input_sizes)
    }

    pub async fn output_sizes(&self, config: &Config) -> Result<Vec<usize>, ProtocolError> {
        let reply = self
            .transport
            .post(
                &self.base,
                "/output-sizes",
                self.query(config),
                self.timeout,
            )
            .await?;
        Ok(decode_reply::<OutputSizesResponse>(&reply)?.output_sizes)
    }

    pub async fn features(&self, config: &Config) -> Result<Features, ProtocolError> {
        let reply = self
            .transport
            .post(&self.base, "/model-info", self.query(config), self.timeout)
            .await?;
        Ok(decode_reply::<ModelInfoResponse>(&reply)?.support)
    }

    /// Queries name, sizes and features.
    pub async fn descriptor(&self, config: &Config) -> Result<ModelDescriptor, ProtocolError> {
        let info = self.info().await?;
        if !info.models.iter().any(|m| m == &self.name) {
            return Err(ProtocolError::UnknownModel(self.name.clone()));
        }
        Ok(ModelDescriptor {
            name: self.name.clone(),
            input_sizes: self.input_sizes(config).await?,
            output_sizes: self.output_sizes(config).await?,
            features: self.features(config).await?,
        })
    }

    pub async fn evaluate(
        &self,
        inputs: Vec<Vec<f64>>,
        config: Config,
    ) -> Result<Vec<Vec<f64>>, ProtocolError> {
        Ok(self.evaluate_timed(inputs, config).await?.outputs)
    }

    pub async fn evaluate_timed(
        &self,
        inputs: Vec<Vec<f64>>,
        config: Config,
    ) -> Result<Timed, ProtocolError> {
        let req = EvaluationRequest {
            model_name: self.name.clone(),
            inputs,
            config,
        };
        req.validate()?;
        let reply = self
            .transport
            .post(&self.base, "/evaluate", encode_request(&req), self.timeout)
            .await?;
        let outputs = if (200..300).contains(&reply.status) {
            decode_response(&reply.body)?.into_result()?
        } else {
            return Err(remote_error(&reply));
        };
        Ok(Timed {
            outputs,
            compute: reply.compute,
        })
    }
}

/// One-shot evaluation against `url`.
pub async fn client_evaluate(
    url: &str,
    name: &str,
    inputs: Vec<Vec<f64>>,
    config: Config,
    timeout: Duration,
) -> Result<Vec<Vec<f64>>, ProtocolError> {
    HttpModel::new(url, name)
        .with_timeout(timeout)
        .evaluate(inputs, config)
        .await
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnhealthyReason {
    Timeout,
    Unreachable(String),
    MalformedBody(String),
    Status(u16),
    NoModels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Health {
    Healthy,
    Unhealthy(UnhealthyReason),
}

impl Health {
    pub fn is_healthy(&self) -> bool {
        matches!(self, Health::Healthy)
    }
}

/// Healthy iff `GET /info` answers within `timeout` and lists at least one
/// model. Pass [`HEALTH_TIMEOUT`] for the default.
pub async fn health_check(transport: &Transport, url: &str, timeout: Duration) -> Health {
    let timeout = if timeout.is_zero() {
        HEALTH_TIMEOUT
    } else {
        timeout
    };
    let attempt = tokio::time::timeout(timeout, transport.get(url, "/info", timeout)).await;
    let reply = match attempt {
        Err(_) | Ok(Err(ProtocolError::Timeout)) => {
            return Health::Unhealthy(UnhealthyReason::Timeout)
        }
        Ok(Err(e)) => return Health::Unhealthy(UnhealthyReason::Unreachable(e.to_string())),
        Ok(Ok(r)) => r,
    };
    if !(200..300).contains(&reply.status) {
        return Health::Unhealthy(UnhealthyReason::Status(reply.status));
    }
    match decode::<InfoResponse>(&reply.body) {
        Ok(info) if !info.models.is_empty() => Health::Healthy,
        Ok(_) => Health::Unhealthy(UnhealthyReason::NoModels),
        Err(e) => Health::Unhealthy(UnhealthyReason::MalformedBody(e.to_string())),
    }
}
