use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use hyper_util::rt::TokioIo;
use hyper_util::service::TowerToHyperService;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Semaphore};
use tokio::task::{JoinHandle, JoinSet};

use super::codec::{decode, decode_request, encode, encode_response};
use super::types::{
    codes, Config, EvaluationResponse, InfoResponse, InputSizesResponse, ModelDescriptor,
    ModelInfoResponse, ModelQuery, OutputSizesResponse, PROTOCOL_VERSION,
};
use super::{ProtocolError, COMPUTE_TIME_HEADER, DEFAULT_PORT};

/// Failure raised by a model's evaluate function.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct ModelError(pub String);

/// Something that can be served: a descriptor plus an evaluate function.
pub trait Model: Send + Sync + 'static {
    fn descriptor(&self) -> &ModelDescriptor;

    fn evaluate(&self, inputs: &[Vec<f64>], config: &Config) -> Result<Vec<Vec<f64>>, ModelError>;
}

impl<M: Model + ?Sized> Model for Arc<M> {
    fn descriptor(&self) -> &ModelDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&self, inputs: &[Vec<f64>], config: &Config) -> Result<Vec<Vec<f64>>, ModelError> {
        (**self).evaluate(inputs, config)
    }
}

/// Listen port from the `PORT` environment variable, or 4242.
pub fn default_port() -> u16 {
    port_from(std::env::var("PORT").ok().as_deref())
}

pub(crate) fn port_from(value: Option<&str>) -> u16 {
    value
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: IpAddr,
    /// Evaluations processed at once; further requests wait.
    pub max_concurrent: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            host: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            max_concurrent: 1,
        }
    }
}

/// Per-endpoint request counters.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub info: AtomicU64,
    pub sizes: AtomicU64,
    pub model_info: AtomicU64,
    pub evaluate: AtomicU64,
}

impl ServerStats {
    pub fn total(&self) -> u64 {
        self.info.load(Ordering::Relaxed)
            + self.sizes.load(Ordering::Relaxed)
            + self.model_info.load(Ordering::Relaxed)
            + self.evaluate.load(Ordering::Relaxed)
    }
}

struct ServerState {
    models: BTreeMap<String, Arc<dyn Model>>,
    limit: Semaphore,
    stats: Arc<ServerStats>,
}

/// A running server. Dropping the handle stops it abruptly.
pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Address clients on this host should use.
    pub fn connect_addr(&self) -> SocketAddr {
        let ip = if self.addr.ip().is_unspecified() {
            IpAddr::V4(Ipv4Addr::LOCALHOST)
        } else {
            self.addr.ip()
        };
        SocketAddr::new(ip, self.addr.port())
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.connect_addr())
    }

    pub fn stats(&self) -> &Arc<ServerStats> {
        &self.stats
    }

    /// Stops accepting connections and gives in-flight requests a short
    /// grace period.
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Drops the listener and every open connection immediately, the way a
    /// crashed process would.
    pub fn kill(self) {
        self.task.abort();
    }

    /// Runs until the server task ends.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves one model on `0.0.0.0:port`.
pub async fn serve_model(model: Arc<dyn Model>, port: u16) -> Result<ServerHandle, ProtocolError> {
    let opts = ServeOptions::default();
    serve_models(vec![model], SocketAddr::new(opts.host, port), opts).await
}

pub async fn serve_models(
    models: Vec<Arc<dyn Model>>,
    addr: SocketAddr,
    opts: ServeOptions,
) -> Result<ServerHandle, ProtocolError> {
    let mut by_name = BTreeMap::new();
    for model in models {
        let desc = model.descriptor();
        desc.validate()?;
        let name = desc.name.clone();
        if by_name.insert(name.clone(), model).is_some() {
            return Err(ProtocolError::SchemaViolation(format!(
                "duplicate model name `{name}`"
            )));
        }
    }
    let stats = Arc::new(ServerStats::default());
    let state = Arc::new(ServerState {
        models: by_name,
        limit: Semaphore::new(opts.max_concurrent.max(1)),
        stats: stats.clone(),
    });
    serve_router(router(state), addr, stats).await
}

/// Binds `addr` and serves `router` on it until the handle is stopped.
pub(crate) async fn serve_router(
    router: Router,
    addr: SocketAddr,
    stats: Arc<ServerStats>,
) -> Result<ServerHandle, ProtocolError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ProtocolError::PortInUse(addr.port()),
        _ => ProtocolError::Io(e),
    })?;
    let local = listener.local_addr()?;
    let (stop_tx, stop_rx) = oneshot::channel();
    let task = tokio::spawn(accept_loop(listener, router, stop_rx));
    tracing::debug!(addr = %local, "listening");
    Ok(ServerHandle {
        addr: local,
        stats,
        stop: Some(stop_tx),
        task,
    })
}

async fn accept_loop(listener: TcpListener, router: Router, mut stop: oneshot::Receiver<()>) {
    // Connections live in this set so that aborting the task tears them down.
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            _ = &mut stop => break,
            accepted = listener.accept() => {
                let Ok((stream, _)) = accepted else { continue };
                let _ = stream.set_nodelay(true);
                let svc = TowerToHyperService::new(router.clone());
                conns.spawn(async move {
                    let _ = hyper::server::conn::http1::Builder::new()
                        .serve_connection(TokioIo::new(stream), svc)
                        .await;
                });
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    let _ = tokio::time::timeout(Duration::from_secs(2), async {
        while conns.join_next().await.is_some() {}
    })
    .await;
}

fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/input-sizes", post(input_sizes))
        .route("/output-sizes", post(output_sizes))
        .route("/model-info", post(model_info))
        .route("/evaluate", post(evaluate))
        .route("/gradient", post(not_supported))
        .route("/apply-jacobian", post(not_supported))
        .route("/apply-hessian", post(not_supported))
        .with_state(state)
}

pub(crate) fn json_reply(status: StatusCode, body: Vec<u8>) -> Response {
    let mut resp = (status, body).into_response();
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    resp
}

pub(crate) fn error_reply(err: &ProtocolError) -> Response {
    let status = match err {
        ProtocolError::MalformedBody(_)
        | ProtocolError::SchemaViolation(_)
        | ProtocolError::UnknownModel(_) => StatusCode::BAD_REQUEST,
        ProtocolError::NotSupported(_) => StatusCode::NOT_IMPLEMENTED,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    json_reply(
        status,
        encode_response(&EvaluationResponse::error(err.code(), err.to_string())),
    )
}

impl ServerState {
    fn find(&self, name: &str) -> Result<&Arc<dyn Model>, ProtocolError> {
        self.models
            .get(name)
            .ok_or_else(|| ProtocolError::UnknownModel(name.to_owned()))
    }

    fn query(&self, body: &[u8]) -> Result<&Arc<dyn Model>, ProtocolError> {
        let query: ModelQuery = decode(body)?;
        self.find(&query.name)
    }
}

async fn info(State(state): State<Arc<ServerState>>) -> Response {
    state.stats.info.fetch_add(1, Ordering::Relaxed);
    let body = InfoResponse {
        protocol_version: PROTOCOL_VERSION,
        models: state.models.keys().cloned().collect(),
    };
    json_reply(StatusCode::OK, encode(&body))
}

async fn input_sizes(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.stats.sizes.fetch_add(1, Ordering::Relaxed);
    match state.query(&body) {
        Ok(m) => json_reply(
            StatusCode::OK,
            encode(&InputSizesResponse {
                input_sizes: m.descriptor().input_sizes.clone(),
            }),
        ),
        Err(e) => error_reply(&e),
    }
}

async fn output_sizes(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.stats.sizes.fetch_add(1, Ordering::Relaxed);
    match state.query(&body) {
        Ok(m) => json_reply(
            StatusCode::OK,
            encode(&OutputSizesResponse {
                output_sizes: m.descriptor().output_sizes.clone(),
            }),
        ),
        Err(e) => error_reply(&e),
    }
}

async fn model_info(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.stats.model_info.fetch_add(1, Ordering::Relaxed);
    match state.query(&body) {
        Ok(m) => json_reply(
            StatusCode::OK,
            encode(&ModelInfoResponse {
                support: m.descriptor().features,
            }),
        ),
        Err(e) => error_reply(&e),
    }
}

async fn not_supported() -> Response {
    error_reply(&ProtocolError::NotSupported("derivative evaluation"))
}

async fn evaluate(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.stats.evaluate.fetch_add(1, Ordering::Relaxed);
    let req = match decode_request(&body) {
        Ok(r) => r,
        Err(e) => return error_reply(&e),
    };
    let model = match state.find(&req.model_name) {
        Ok(m) => m.clone(),
        Err(e) => return error_reply(&e),
    };
    if let Err(e) = model.descriptor().check_inputs(&req.inputs) {
        return error_reply(&e);
    }
    let Ok(_permit) = state.limit.acquire().await else {
        return error_reply(&ProtocolError::Unreachable("server shutting down".into()));
    };
    let started = Instant::now();
    let eval_model = model.clone();
    let result =
        tokio::task::spawn_blocking(move || eval_model.evaluate(&req.inputs, &req.config)).await;
    let elapsed = started.elapsed();
    let resp = match result {
        Ok(Ok(output)) => match model.descriptor().check_outputs(&output) {
            Ok(()) => EvaluationResponse::ok(output),
            Err(e) => EvaluationResponse::error(codes::INVALID_OUTPUT, e.to_string()),
        },
        Ok(Err(e)) => EvaluationResponse::error(codes::EVALUATION_FAILED, e.0),
        Err(join) => EvaluationResponse::error(
            codes::EVALUATION_FAILED,
            format!("evaluation panicked: {join}"),
        ),
    };
    let status = match resp {
        EvaluationResponse::Output { .. } => StatusCode::OK,
        EvaluationResponse::Error { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let mut reply = json_reply(status, encode_response(&resp));
    if let Ok(v) = HeaderValue::from_str(&format!("{:.9}", elapsed.as_secs_f64())) {
        reply.headers_mut().insert(COMPUTE_TIME_HEADER, v);
    }
    reply
}
