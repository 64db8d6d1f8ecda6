//! The balancer's HTTP face: the same endpoints as a model server, so
//! clients cannot tell the two apart.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;

use super::{Balancer, BalancerError};
use crate::protocol::{
    codes, decode, encode, encode_response, error_reply, json_reply, serve_router,
    EvaluationResponse, InfoResponse, InputSizesResponse, ModelDescriptor, ModelInfoResponse,
    ModelQuery, OutputSizesResponse, ProtocolError, ServerHandle, ServerStats, COMPUTE_TIME_HEADER,
    PROTOCOL_VERSION,
};

/// Serves `balancer` on `addr`. Extra route: `GET /status` returns the
/// endpoint table.
pub async fn serve_balancer(
    balancer: Balancer,
    addr: SocketAddr,
) -> Result<ServerHandle, ProtocolError> {
    let router = Router::new()
        .route("/info", get(info))
        .route("/input-sizes", post(input_sizes))
        .route("/output-sizes", post(output_sizes))
        .route("/model-info", post(model_info))
        .route("/evaluate", post(evaluate))
        .route("/gradient", post(not_supported))
        .route("/apply-jacobian", post(not_supported))
        .route("/apply-hessian", post(not_supported))
        .route("/status", get(status))
        .with_state(Arc::new(balancer));
    serve_router(router, addr, Arc::new(ServerStats::default())).await
}

type Shared = State<Arc<Balancer>>;

async fn info(State(b): Shared) -> Response {
    let body = InfoResponse {
        protocol_version: PROTOCOL_VERSION,
        models: vec![b.config().model_name.clone()],
    };
    json_reply(StatusCode::OK, encode(&body))
}

async fn described(b: &Balancer, body: &[u8]) -> Result<ModelDescriptor, Response> {
    let query: ModelQuery = decode(body).map_err(|e| error_reply(&e))?;
    if query.name != b.config().model_name {
        return Err(error_reply(&ProtocolError::UnknownModel(query.name)));
    }
    b.descriptor().await.map_err(|e| upstream(&e))
}

fn upstream(e: &BalancerError) -> Response {
    json_reply(
        StatusCode::BAD_GATEWAY,
        encode_response(&EvaluationResponse::error(
            codes::UPSTREAM_FAILURE,
            e.to_string(),
        )),
    )
}

async fn input_sizes(State(b): Shared, body: Bytes) -> Response {
    match described(&b, &body).await {
        Ok(d) => json_reply(
            StatusCode::OK,
            encode(&InputSizesResponse {
                input_sizes: d.input_sizes,
            }),
        ),
        Err(r) => r,
    }
}

async fn output_sizes(State(b): Shared, body: Bytes) -> Response {
    match described(&b, &body).await {
        Ok(d) => json_reply(
            StatusCode::OK,
            encode(&OutputSizesResponse {
                output_sizes: d.output_sizes,
            }),
        ),
        Err(r) => r,
    }
}

async fn model_info(State(b): Shared, body: Bytes) -> Response {
    match described(&b, &body).await {
        Ok(d) => json_reply(
            StatusCode::OK,
            encode(&ModelInfoResponse {
                support: d.features,
            }),
        ),
        Err(r) => r,
    }
}

async fn evaluate(State(b): Shared, body: Bytes) -> Response {
    let reply = b.dispatch(body).await;
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::BAD_GATEWAY);
    let mut resp = json_reply(status, reply.body.to_vec());
    if let Some(c) = reply.compute {
        if let Ok(v) = HeaderValue::from_str(&format!("{:.9}", c.as_secs_f64())) {
            resp.headers_mut().insert(COMPUTE_TIME_HEADER, v);
        }
    }
    resp
}

async fn not_supported() -> Response {
    error_reply(&ProtocolError::NotSupported("derivative evaluation"))
}

async fn status(State(b): Shared) -> Response {
    json_reply(StatusCode::OK, encode(&b.snapshot()))
}
