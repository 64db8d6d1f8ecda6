mod common;

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use uqlb::models::{FnModel, Identity};
use uqlb::protocol::{
    decode_request, decode_response, encode_request, encode_response, health_check, serve_models,
    Config, ConfigValue, EvaluationRequest, EvaluationResponse, Health, HttpModel, Model,
    ProtocolError, ServeOptions, ServerHandle, Transport, UnhealthyReason,
};

use common::block_on;

async fn serve(models: Vec<Arc<dyn Model>>) -> ServerHandle {
    let opts = ServeOptions {
        host: Ipv4Addr::LOCALHOST.into(),
        ..ServeOptions::default()
    };
    serve_models(models, SocketAddr::from((Ipv4Addr::LOCALHOST, 0)), opts)
        .await
        .unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e300..1e300f64,
        -1.0..1.0f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX)
    ]
}

fn config() -> impl Strategy<Value = Config> {
    let value = prop_oneof![
        any::<bool>().prop_map(ConfigValue::Bool),
        finite().prop_map(ConfigValue::Number),
        "[a-z ]{0,8}".prop_map(ConfigValue::Text),
    ];
    prop::collection::btree_map("[a-z_]{1,6}", value, 0..4)
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(finite(), 1..6), 1..4)
}

proptest! {
    #[test]
    fn request_round_trip(name in "[A-Za-z0-9_-]{1,12}", inputs in vectors(), config in config()) {
        let req = EvaluationRequest { model_name: name, inputs, config };
        prop_assert_eq!(decode_request(&encode_request(&req)).unwrap(), req);
    }

    #[test]
    fn response_round_trip(out in vectors(), code in "[A-Za-z]{1,10}", msg in ".{0,20}", ok in any::<bool>()) {
        let resp = if ok { EvaluationResponse::ok(out) } else { EvaluationResponse::error(code, msg) };
        prop_assert_eq!(decode_response(&encode_response(&resp)).unwrap(), resp);
    }
}

#[test]
fn wire_field_names() {
    let req = EvaluationRequest::new("modelname", vec![vec![1.0, 2.0]]);
    let v: serde_json::Value = serde_json::from_slice(&encode_request(&req)).unwrap();
    assert_eq!(v["name"], "modelname");
    assert_eq!(v["input"], serde_json::json!([[1.0, 2.0]]));
    assert!(v["config"].is_object());
    let ok: serde_json::Value =
        serde_json::from_slice(&encode_response(&EvaluationResponse::ok(vec![vec![1.0]]))).unwrap();
    assert!(ok.get("output").is_some());
    let err: serde_json::Value =
        serde_json::from_slice(&encode_response(&EvaluationResponse::error("X", "y"))).unwrap();
    assert_eq!(err["error"]["code"], "X");
}

#[test]
fn identity_round_trip_and_info() {
    block_on(async {
        let s = serve(vec![Arc::new(Identity::new("modelname", 1))]).await;
        let m = HttpModel::new(&s.url(), "modelname");
        assert_eq!(
            m.evaluate(vec![vec![3.0]], Config::new()).await.unwrap(),
            vec![vec![3.0]]
        );
        assert!(m
            .info()
            .await
            .unwrap()
            .models
            .contains(&"modelname".to_owned()));
        let d = m.descriptor(&Config::new()).await.unwrap();
        assert_eq!((d.input_sizes, d.output_sizes), (vec![1], vec![1]));
        assert!(d.features.evaluate && !d.features.gradient);
    });
}

#[test]
fn wrong_dimension_is_a_schema_violation() {
    block_on(async {
        let s = serve(vec![Arc::new(Identity::new("modelname", 2))]).await;
        let err = HttpModel::new(&s.url(), "modelname")
            .evaluate(vec![vec![1.0]], Config::new())
            .await
            .unwrap_err();
        assert!(
            matches!(&err, ProtocolError::Remote { code, .. } if code == "SchemaViolation"),
            "{err:?}"
        );
        let err = HttpModel::new(&s.url(), "other")
            .evaluate(vec![vec![1.0, 2.0]], Config::new())
            .await
            .unwrap_err();
        assert!(
            matches!(&err, ProtocolError::Remote { code, .. } if code == "UnknownModel"),
            "{err:?}"
        );
    });
}

#[test]
fn malformed_bodies_get_structured_errors() {
    block_on(async {
        let s = serve(vec![Arc::new(Identity::new("modelname", 1))]).await;
        let t = Transport::new();
        let r = t
            .post(
                &s.url(),
                "/evaluate",
                b"{\"name\": \"modelname\", \"inp".to_vec(),
                Duration::from_secs(5),
            )
            .await
            .unwrap();
        assert_eq!(r.status, 400);
        assert!(String::from_utf8_lossy(&r.body).contains("MalformedBody"));
        let r = t
            .post(
                &s.url(),
                "/evaluate",
                b"{\"input\": [[1.0]]}".to_vec(),
                Duration::from_secs(5),
            )
            .await
            .unwrap();
        assert!(String::from_utf8_lossy(&r.body).contains("SchemaViolation"));
        let r = t
            .post(
                &s.url(),
                "/gradient",
                b"{}".to_vec(),
                Duration::from_secs(5),
            )
            .await
            .unwrap();
        assert!(String::from_utf8_lossy(&r.body).contains("NotSupported"));
    });
}

#[test]
fn misshapen_model_output_never_reaches_the_client() {
    block_on(async {
        let bad = FnModel::new("modelname", 1, 2, |x: &[f64]| vec![x[0]]);
        let s = serve(vec![Arc::new(bad)]).await;
        let err = HttpModel::new(&s.url(), "modelname")
            .evaluate(vec![vec![1.0]], Config::new())
            .await
            .unwrap_err();
        assert!(
            matches!(&err, ProtocolError::Remote { code, .. } if code == "InvalidOutput"),
            "{err:?}"
        );
    });
}

#[test]
fn identical_requests_get_identical_answers() {
    block_on(async {
        let f = FnModel::new("modelname", 3, 1, |x: &[f64]| {
            vec![x.iter().map(|v| v.sin()).sum()]
        });
        let s = serve(vec![Arc::new(f)]).await;
        let m = HttpModel::new(&s.url(), "modelname");
        let x = vec![vec![0.1, 0.2, 0.3]];
        assert_eq!(
            m.evaluate(x.clone(), Config::new()).await.unwrap(),
            m.evaluate(x, Config::new()).await.unwrap()
        );
    });
}

#[test]
fn evaluations_are_serialized_per_server() {
    block_on(async {
        let slow = FnModel::new("modelname", 1, 1, |x: &[f64]| {
            std::thread::sleep(Duration::from_millis(150));
            x.to_vec()
        });
        let s = serve(vec![Arc::new(slow)]).await;
        let m = HttpModel::new(&s.url(), "modelname");
        let t0 = Instant::now();
        let (a, b) = tokio::join!(
            m.evaluate(vec![vec![1.0]], Config::new()),
            m.evaluate(vec![vec![2.0]], Config::new())
        );
        a.unwrap();
        b.unwrap();
        assert!(t0.elapsed() >= Duration::from_millis(300));
    });
}

#[test]
fn occupied_port_is_reported() {
    block_on(async {
        let s = serve(vec![Arc::new(Identity::new("modelname", 1))]).await;
        let opts = ServeOptions {
            host: Ipv4Addr::LOCALHOST.into(),
            ..ServeOptions::default()
        };
        let r = serve_models(
            vec![Arc::new(Identity::new("modelname", 1))],
            s.addr(),
            opts,
        )
        .await;
        assert!(matches!(r, Err(ProtocolError::PortInUse(_))));
    });
}

#[test]
fn unreachable_server_fails_fast() {
    block_on(async {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let url = format!("127.0.0.1:{port}");
        let t0 = Instant::now();
        let err = HttpModel::new(&url, "modelname")
            .with_timeout(Duration::from_secs(2))
            .evaluate(vec![vec![1.0]], Config::new())
            .await
            .unwrap_err();
        assert!(matches!(err, ProtocolError::Unreachable(_)), "{err:?}");
        assert!(t0.elapsed() < Duration::from_secs(3));
        let h = health_check(&Transport::new(), &url, Duration::from_secs(1)).await;
        assert!(matches!(
            h,
            Health::Unhealthy(UnhealthyReason::Unreachable(_))
        ));
    });
}

#[test]
fn health_check_classifies_servers() {
    block_on(async {
        let s = serve(vec![Arc::new(Identity::new("modelname", 1))]).await;
        assert_eq!(
            health_check(&Transport::new(), &s.url(), Duration::from_secs(2)).await,
            Health::Healthy
        );

        let garbage = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = garbage.local_addr().unwrap();
        tokio::spawn(async move {
            while let Ok((mut sock, _)) = garbage.accept().await {
                let mut buf = [0u8; 1024];
                let _ = sock.read(&mut buf).await;
                let _ = sock
                    .write_all(b"HTTP/1.1 200 OK\r\ncontent-length: 9\r\nconnection: close\r\n\r\nnot json!")
                    .await;
            }
        });
        let h = health_check(&Transport::new(), &addr.to_string(), Duration::from_secs(2)).await;
        assert!(
            matches!(h, Health::Unhealthy(UnhealthyReason::MalformedBody(_))),
            "{h:?}"
        );

        let silent = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = silent.local_addr().unwrap();
        tokio::spawn(async move {
            let mut held = Vec::new();
            while let Ok((sock, _)) = silent.accept().await {
                held.push(sock);
            }
        });
        let h = health_check(
            &Transport::new(),
            &addr.to_string(),
            Duration::from_millis(300),
        )
        .await;
        assert_eq!(h, Health::Unhealthy(UnhealthyReason::Timeout));
    });
}
