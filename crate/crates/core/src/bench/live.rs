//! Real-time execution against an HTTP target, and a stub server to aim it at.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::any;
use axum::Router;
use parking_lot::Mutex;
use tokio::sync::{oneshot, Semaphore};
use tokio::task::JoinSet;
use tokio::time::Instant;

use super::{first_arrival, http_message_bytes, next_arrival_delay, user_rng, BenchError, Sample, SampleStatus, StubModel, TokenSource, WorkloadSpec};
use crate::service::{ServiceClient, WireFormat};
use crate::token::{GrantRequest, GrantType};

struct Shot {
    client: reqwest::Client,
    url: String,
    method: reqwest::Method,
    body: String,
    bearer: Option<String>,
    timeout: Duration,
    start_line: usize,
}

impl Shot {
    async fn fire(&self, start: Instant, user_index: usize) -> Sample {
        let sent = Instant::now();
        let mut req = self.client.request(self.method.clone(), &self.url).body(self.body.clone());
        if let Some(b) = &self.bearer {
            req = req.bearer_auth(b);
        }
        let auth = self.bearer.as_ref().map(|b| ("authorization", b.len() + 7));
        let request_bytes = http_message_bytes(self.start_line, auth.into_iter(), self.body.len());
        let outcome = tokio::time::timeout(self.timeout, async {
            let resp = req.send().await?;
            let code = resp.status().as_u16();
            let head = http_message_bytes(15, resp.headers().iter().map(|(k, v)| (k.as_str(), v.len())), 0);
            let body = resp.bytes().await?;
            Ok::<_, reqwest::Error>((code, head + body.len() as u64))
        })
        .await;
        let latency = sent.elapsed();
        let (status, response_bytes, latency) = match outcome {
            Ok(Ok((code, n))) => (SampleStatus::from_http(code), n, latency),
            Ok(Err(e)) if e.is_timeout() => (SampleStatus::Timeout, 0, self.timeout),
            Ok(Err(_)) => (SampleStatus::ConnError, 0, latency),
            Err(_) => (SampleStatus::Timeout, 0, self.timeout),
        };
        Sample {
            send_time: sent.saturating_duration_since(start).as_nanos() as u64,
            latency: latency.as_nanos() as u64,
            status,
            request_bytes,
            response_bytes,
            user_index,
        }
    }
}

async fn resolve(target: &str) -> Result<reqwest::Url, BenchError> {
    let url = reqwest::Url::parse(target).map_err(|e| BenchError::TargetResolution(format!("{target}: {e}")))?;
    let host = url.host_str().ok_or_else(|| BenchError::TargetResolution(format!("{target}: no host")))?.to_owned();
    let port = url.port_or_known_default().unwrap_or(80);
    let mut addrs = tokio::net::lookup_host((host.as_str(), port))
        .await
        .map_err(|e| BenchError::TargetResolution(format!("{host}: {e}")))?;
    if addrs.next().is_none() {
        return Err(BenchError::TargetResolution(format!("{host}: no addresses")));
    }
    Ok(url)
}

async fn bearer(base: &str, source: &TokenSource) -> Result<Option<String>, BenchError> {
    match source {
        TokenSource::None => Ok(None),
        TokenSource::Bearer { token } => Ok(Some(token.clone())),
        TokenSource::ClientCredentials { client_id, client_secret, audience } => {
            let req = GrantRequest::new(GrantType::ClientCredentials, client_id.as_str(), audience.as_str()).with_secret(client_secret.as_str());
            let resp = ServiceClient::new(base)
                .request_token(&req, WireFormat::Json)
                .await
                .map_err(|e| BenchError::TokenUnavailable(e.to_string()))?;
            Ok(Some(resp.access_token.bearer()))
        }
    }
}

/// Runs `spec` in real time against `spec.target`. Every issued request
/// yields one sample, including those still in flight when the duration
/// ends; samples come back ordered by send time.
pub async fn run_workload(spec: &WorkloadSpec) -> Result<Vec<Sample>, BenchError> {
    spec.validate()?;
    let base = resolve(&spec.target).await?;
    let base = base.as_str().trim_end_matches('/').to_owned();
    let bearer = bearer(&base, &spec.request.token).await?;
    let method = reqwest::Method::from_bytes(spec.request.method.as_bytes())
        .map_err(|e| BenchError::InvalidSpec(format!("method: {e}")))?;
    let client = reqwest::Client::builder()
        .pool_max_idle_per_host(spec.users.max(1))
        .build()
        .map_err(|e| BenchError::TargetResolution(e.to_string()))?;
    let shot = Arc::new(Shot {
        client,
        url: format!("{base}/{}", spec.request.path.trim_start_matches('/')),
        method,
        body: spec.request.body.clone(),
        bearer,
        timeout: Duration::from_secs_f64(spec.request_timeout),
        start_line: spec.request.method.len() + 1 + spec.request.path.len() + 9,
    });

    let samples = Arc::new(Mutex::new(Vec::new()));
    // a short lead lets every user task get scheduled before the first send
    let start = Instant::now() + Duration::from_millis(20);
    let end = start + Duration::from_secs_f64(spec.duration);
    let pacing = Duration::from_secs_f64(spec.pacing());
    let mut users = JoinSet::new();
    for u in 0..spec.users {
        let (shot, samples, spec) = (shot.clone(), samples.clone(), spec.clone());
        users.spawn(async move {
            let mut rng = user_rng(spec.seed, u);
            let mut at = start + Duration::from_secs_f64(first_arrival(&mut rng, &spec));
            let mut inflight = JoinSet::new();
            while at < end {
                tokio::time::sleep_until(at).await;
                if spec.pattern.is_closed_loop() {
                    let sample = shot.fire(start, u).await;
                    samples.lock().push(sample);
                    let delay = Duration::from_secs_f64(next_arrival_delay(spec.pattern, &mut rng, &spec));
                    at = (Instant::now() + delay).max(at + pacing);
                } else {
                    let (shot, samples) = (shot.clone(), samples.clone());
                    inflight.spawn(async move {
                        let sample = shot.fire(start, u).await;
                        samples.lock().push(sample);
                    });
                    at += Duration::from_secs_f64(next_arrival_delay(spec.pattern, &mut rng, &spec));
                }
            }
            while inflight.join_next().await.is_some() {}
        });
    }
    while users.join_next().await.is_some() {}
    let mut samples = std::mem::take(&mut *samples.lock());
    samples.sort_by_key(|s| (s.send_time, s.user_index));
    Ok(samples)
}

struct StubState {
    model: StubModel,
    workers: Option<Semaphore>,
    in_system: AtomicUsize,
    received: AtomicU64,
    body: Vec<u8>,
}

async fn stub_handler(State(st): State<Arc<StubState>>) -> (StatusCode, Vec<u8>) {
    st.received.fetch_add(1, Ordering::SeqCst);
    let cap = st.model.workers.map(|w| w + st.model.queue_limit);
    let admitted = st.in_system.fetch_add(1, Ordering::SeqCst);
    if cap.is_some_and(|c| admitted >= c) {
        st.in_system.fetch_sub(1, Ordering::SeqCst);
        return (StatusCode::SERVICE_UNAVAILABLE, Vec::new());
    }
    let permit = match &st.workers {
        Some(s) => Some(s.acquire().await.expect("semaphore open")),
        None => None,
    };
    tokio::time::sleep(Duration::from_secs_f64(st.model.service_time)).await;
    drop(permit);
    st.in_system.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::OK, st.body.clone())
}

/// An HTTP server that behaves like a [`StubModel`] in real time and
/// counts the requests it receives.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl StubServer {
    pub async fn start(model: StubModel) -> std::io::Result<StubServer> {
        let state = Arc::new(StubState {
            workers: model.workers.map(Semaphore::new),
            body: vec![b'.'; model.response_bytes as usize],
            model,
            in_system: AtomicUsize::new(0),
            received: AtomicU64::new(0),
        });
        let app = Router::new().fallback(any(stub_handler)).with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(StubServer { addr, state, stop: Some(tx), task })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn received(&self) -> u64 {
        self.state.received.load(Ordering::SeqCst)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}
