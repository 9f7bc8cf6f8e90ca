//! The proxy resource server role: path allow-listing, body limits and
//! header stripping in front of an upstream.
//!
//! `cargo run --example proxy_gateway`

use axum::http::HeaderMap;
use axum::routing::any;
use axum::Router;
use capodaz::service::{serve, Role, ServiceConfig};

#[tokio::main]
async fn main() {
    // an upstream that reports which headers reached it
    let upstream = Router::new().fallback(any(|headers: HeaderMap| async move {
        let names: Vec<&str> = headers.keys().map(|k| k.as_str()).collect();
        format!("upstream saw: {}", names.join(", "))
    }));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let upstream_addr = listener.local_addr().unwrap().to_string();
    tokio::spawn(async move { axum::serve(listener, upstream).await.unwrap() });

    let mut cfg = ServiceConfig {
        role: Role::ProxyResourceServer,
        upstream: Some(upstream_addr),
        listen_address: "127.0.0.1:0".into(),
        ..ServiceConfig::default()
    };
    cfg.proxy.allowed_paths = vec!["/api/".into()];
    cfg.proxy.max_body_bytes = 1024;
    let svc = serve(cfg).await.unwrap();
    let base = svc.base_url();
    let http = reqwest::Client::new();

    let r = http.get(format!("{base}/api/status")).header("cookie", "session=1").header("x-trace", "abc").send().await.unwrap();
    println!("GET /api/status -> {}: {}", r.status(), r.text().await.unwrap());
    let r = http.get(format!("{base}/admin")).send().await.unwrap();
    println!("GET /admin -> {} {:?}", r.status(), r.headers().get("x-capodaz-reason"));
    let r = http.post(format!("{base}/api/upload")).body(vec![0u8; 4096]).send().await.unwrap();
    println!("POST 4 KiB -> {}", r.status());

    svc.shutdown().await.unwrap();
}
