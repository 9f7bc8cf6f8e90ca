//! Proxy resource server: validates request shape and forwards upstream.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{ConnectInfo, Request, State};
use axum::http::{header, HeaderMap, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use parking_lot::Mutex;

use super::{ServiceConfig, ServiceError, ServiceState, REASON_HEADER};

const HOP_BY_HOP: [&str; 10] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "host",
    "content-length",
];

pub(super) struct ProxyState {
    http: reqwest::Client,
    inflight: Arc<Mutex<HashMap<IpAddr, usize>>>,
}

impl ProxyState {
    pub(super) fn new(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout))
            .build()
            .map_err(|e| ServiceError::ConfigInvalid(format!("proxy client: {e}")))?;
        Ok(ProxyState { http, inflight: Arc::default() })
    }
}

/// One in-flight request from a source; released on drop.
struct Slot {
    inflight: Arc<Mutex<HashMap<IpAddr, usize>>>,
    source: IpAddr,
}

impl Slot {
    fn acquire(inflight: &Arc<Mutex<HashMap<IpAddr, usize>>>, source: IpAddr, limit: usize) -> Option<Slot> {
        let mut map = inflight.lock();
        let n = map.entry(source).or_insert(0);
        if *n >= limit {
            return None;
        }
        *n += 1;
        Some(Slot { inflight: inflight.clone(), source })
    }
}

impl Drop for Slot {
    fn drop(&mut self) {
        let mut map = self.inflight.lock();
        if let Some(n) = map.get_mut(&self.source) {
            *n -= 1;
            if *n == 0 {
                map.remove(&self.source);
            }
        }
    }
}

fn reject(status: StatusCode, reason: &'static str) -> Response {
    let body = serde_json::json!({ "code": reason, "reason": status.canonical_reason().unwrap_or("") });
    (status, [(header::CONTENT_TYPE, "application/json"), (HeaderName::from_static(REASON_HEADER), reason)], body.to_string())
        .into_response()
}

fn is_stripped(name: &HeaderName, extra: &[String]) -> bool {
    HOP_BY_HOP.contains(&name.as_str()) || extra.iter().any(|h| h.eq_ignore_ascii_case(name.as_str()))
}

pub(super) async fn forward(State(st): State<Arc<ServiceState>>, request: Request) -> Response {
    let cfg = &st.config.proxy;
    let source = request
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED), |c| c.0.ip());
    let Some(_slot) = Slot::acquire(&st.proxy.inflight, source, cfg.per_source_limit) else {
        return reject(StatusCode::TOO_MANY_REQUESTS, "SourceLimitExceeded");
    };

    let (parts, body) = request.into_parts();
    let path = parts.uri.path();
    if !cfg.allowed_paths.iter().any(|p| path.starts_with(p.as_str())) {
        return reject(StatusCode::FORBIDDEN, "PathNotAllowed");
    }
    if cfg.required_headers.iter().any(|h| !parts.headers.contains_key(h.as_str())) {
        return reject(StatusCode::BAD_REQUEST, "MissingHeader");
    }
    let declared = parts
        .headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > cfg.max_body_bytes) {
        return reject(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge");
    }
    let Ok(body) = to_bytes(Body::new(body), cfg.max_body_bytes).await else {
        return reject(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge");
    };

    let upstream = st.config.upstream.as_deref().unwrap_or_default();
    let target = format!("http://{upstream}{}", parts.uri.path_and_query().map_or("/", |p| p.as_str()));
    let mut headers = HeaderMap::new();
    for (name, value) in &parts.headers {
        if !is_stripped(name, &cfg.strip_headers) {
            headers.append(name.clone(), value.clone());
        }
    }
    let sent = st.proxy.http.request(parts.method, &target).headers(headers).body(body).send().await;
    let upstream_resp = match sent {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, %target, "upstream unreachable");
            return reject(StatusCode::BAD_GATEWAY, "UpstreamUnreachable");
        }
    };
    let status = upstream_resp.status();
    let mut relay_headers = HeaderMap::new();
    for (name, value) in upstream_resp.headers() {
        if !HOP_BY_HOP.contains(&name.as_str()) {
            relay_headers.append(name.clone(), value.clone());
        }
    }
    match upstream_resp.bytes().await {
        Ok(bytes) => {
            let mut resp = (status, bytes).into_response();
            resp.headers_mut().extend(relay_headers);
            resp
        }
        Err(_) => reject(StatusCode::BAD_GATEWAY, "UpstreamUnreachable"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_released() {
        let inflight = Arc::default();
        let ip = IpAddr::V4(Ipv4Addr::LOCALHOST);
        let a = Slot::acquire(&inflight, ip, 2).unwrap();
        let _b = Slot::acquire(&inflight, ip, 2).unwrap();
        assert!(Slot::acquire(&inflight, ip, 2).is_none());
        assert!(Slot::acquire(&inflight, IpAddr::V4(Ipv4Addr::BROADCAST), 2).is_some());
        drop(a);
        assert!(Slot::acquire(&inflight, ip, 2).is_some());
    }
}
