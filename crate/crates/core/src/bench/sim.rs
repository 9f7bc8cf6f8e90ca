//! Virtual-time execution of a workload.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request};
use axum::Router;
use tower::ServiceExt;

use super::{first_arrival, http_message_bytes, next_arrival_delay, secs_to_ns, user_rng, BenchError, Sample, SampleStatus, TokenSource, WorkloadSpec};
use crate::clock::ManualClock;
use crate::codec::{cbor_to_json, json_to_cbor};
use crate::service::{router, ServiceState};
use crate::token::{GrantRequest, GrantType, TokenResponse};
use crate::UnixSeconds;

/// A server with `workers` parallel slots, each taking `service_time`
/// seconds per request, in front of a FIFO queue of `queue_limit` waiting
/// requests. Arrivals finding the queue full get an immediate 503.
#[derive(Debug, Clone, PartialEq)]
pub struct StubModel {
    pub service_time: f64,
    /// `None` serves every request at once.
    pub workers: Option<usize>,
    pub queue_limit: usize,
    pub request_bytes: u64,
    pub response_bytes: u64,
}

impl StubModel {
    /// Answers every request after `latency` seconds, without limit.
    pub fn uncapped(latency: f64) -> Self {
        StubModel { service_time: latency, workers: None, queue_limit: 0, request_bytes: 120, response_bytes: 80 }
    }

    /// Serves at most `rate` requests per second across `workers` slots,
    /// queueing up to `queue_limit` more.
    pub fn capacity(rate: f64, workers: usize, queue_limit: usize) -> Self {
        StubModel {
            service_time: workers as f64 / rate,
            workers: Some(workers),
            queue_limit,
            request_bytes: 120,
            response_bytes: 80,
        }
    }

    pub fn capacity_per_second(&self) -> Option<f64> {
        self.workers.map(|w| w as f64 / self.service_time)
    }
}

/// Queue state of a [`StubModel`] in virtual nanoseconds.
#[derive(Debug, Default)]
struct Queue {
    free_at: BinaryHeap<Reverse<u64>>,
    /// Start times of admitted requests not yet in service.
    waiting: VecDeque<u64>,
}

impl Queue {
    /// Completion time of a request arriving at `t`, or `None` when rejected.
    fn admit(&mut self, model: &StubModel, t: u64) -> Option<u64> {
        let service = secs_to_ns(model.service_time);
        let Some(workers) = model.workers else {
            return Some(t + service);
        };
        if self.free_at.is_empty() {
            self.free_at.extend(std::iter::repeat(Reverse(0)).take(workers.max(1)));
        }
        while self.waiting.front().is_some_and(|&s| s <= t) {
            self.waiting.pop_front();
        }
        let Reverse(earliest) = *self.free_at.peek().expect("at least one worker");
        let start = earliest.max(t);
        if start > t && self.waiting.len() >= model.queue_limit {
            return None;
        }
        self.free_at.pop();
        self.free_at.push(Reverse(start + service));
        if start > t {
            self.waiting.push_back(start);
        }
        Some(start + service)
    }
}

/// The in-process service behind a capacity model: admitted requests run
/// through the real router with the clock at the virtual send time.
pub struct ServiceTarget {
    app: Router,
    clock: Arc<ManualClock>,
    bearer: Option<(String, UnixSeconds)>,
}

impl ServiceTarget {
    /// `state` must read its time from `clock`.
    pub fn new(state: Arc<ServiceState>, clock: Arc<ManualClock>) -> Self {
        ServiceTarget { app: router(state), clock, bearer: None }
    }

    async fn token(&mut self, source: &TokenSource, now: UnixSeconds) -> Result<Option<String>, BenchError> {
        let (client_id, secret, aud) = match source {
            TokenSource::None => return Ok(None),
            TokenSource::Bearer { token } => return Ok(Some(token.clone())),
            TokenSource::ClientCredentials { client_id, client_secret, audience } => (client_id, client_secret, audience),
        };
        if let Some((b, until)) = &self.bearer {
            if now < *until {
                return Ok(Some(b.clone()));
            }
        }
        let grant = GrantRequest::new(GrantType::ClientCredentials, client_id.as_str(), aud.as_str()).with_secret(secret.as_str());
        let json = cbor_to_json(&grant.to_cbor()).map_err(|e| BenchError::TokenUnavailable(e.to_string()))?;
        let req = Request::post("/token")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(json.to_string()))
            .expect("static request");
        let resp = self.app.clone().oneshot(req).await.expect("router is infallible");
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.map_err(|e| BenchError::TokenUnavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(BenchError::TokenUnavailable(format!("{status}: {}", String::from_utf8_lossy(&bytes))));
        }
        let doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| BenchError::TokenUnavailable(e.to_string()))?;
        let resp = json_to_cbor(&doc)
            .ok()
            .and_then(|c| TokenResponse::from_cbor(&c).ok())
            .ok_or_else(|| BenchError::TokenUnavailable("undecodable token response".into()))?;
        let bearer = resp.access_token.bearer();
        // renew a little early so no request carries an expired token
        let until = now + resp.expires_in.saturating_sub(1).max(1) as i64;
        self.bearer = Some((bearer.clone(), until));
        Ok(Some(bearer))
    }

    async fn call(&mut self, spec: &WorkloadSpec, now: UnixSeconds) -> Result<(u16, u64, u64), BenchError> {
        let bearer = self.token(&spec.request.token, now).await?;
        self.clock.set(now);
        let t = &spec.request;
        let mut builder = Request::builder().method(t.method.as_str()).uri(t.path.as_str());
        if let Some(b) = &bearer {
            builder = builder.header(header::AUTHORIZATION, format!("Bearer {b}"));
        }
        let req = builder
            .body(Body::from(t.body.clone()))
            .map_err(|e| BenchError::InvalidSpec(format!("request template: {e}")))?;
        let start_line = t.method.len() + 1 + t.path.len() + 9;
        let auth = bearer.as_ref().map(|b| ("authorization", b.len() + 7));
        let request_bytes = http_message_bytes(start_line, auth.into_iter(), t.body.len());
        let resp = self.app.clone().oneshot(req).await.expect("router is infallible");
        let status = resp.status().as_u16();
        let headers: Vec<(String, usize)> = resp.headers().iter().map(|(k, v)| (k.as_str().to_owned(), v.len())).collect();
        let body = to_bytes(resp.into_body(), usize::MAX).await.map(|b| b.len()).unwrap_or(0);
        let response_bytes = http_message_bytes(15, headers.iter().map(|(k, v)| (k.as_str(), *v)), body);
        Ok((status, request_bytes, response_bytes))
    }
}

enum Backend {
    Stub,
    Service(Box<ServiceTarget>),
}

/// A simulated target: a capacity model and what answers admitted requests.
pub struct SimTarget {
    pub model: StubModel,
    backend: Backend,
    /// Unix time of virtual instant zero; moves forward between runs.
    epoch: UnixSeconds,
    received: u64,
}

impl SimTarget {
    /// A stub answering 200 to every admitted request.
    pub fn stub(model: StubModel) -> Self {
        SimTarget { model, backend: Backend::Stub, epoch: 0, received: 0 }
    }

    pub fn service(target: ServiceTarget, model: StubModel, epoch: UnixSeconds) -> Self {
        SimTarget { model, backend: Backend::Service(Box::new(target)), epoch, received: 0 }
    }

    /// Requests that reached the target, including rejected ones.
    pub fn received(&self) -> u64 {
        self.received
    }

    pub fn epoch(&self) -> UnixSeconds {
        self.epoch
    }

    /// Moves virtual time forward, as between two runs.
    pub fn advance(&mut self, secs: f64) {
        self.epoch += secs.ceil() as i64;
    }
}

/// Runs `spec` against `target` in virtual time. Samples are ordered by
/// send time, ties by user index. Virtual time advances past the run.
pub async fn simulate(spec: &WorkloadSpec, target: &mut SimTarget) -> Result<Vec<Sample>, BenchError> {
    spec.validate()?;
    let end = secs_to_ns(spec.duration);
    let timeout = secs_to_ns(spec.request_timeout);
    let pacing = secs_to_ns(spec.pacing());
    let mut rngs: Vec<_> = (0..spec.users).map(|u| user_rng(spec.seed, u)).collect();
    let mut wakes = BinaryHeap::new();
    for (u, rng) in rngs.iter_mut().enumerate() {
        wakes.push(Reverse((secs_to_ns(first_arrival(rng, spec)), u)));
    }
    let mut queue = Queue::default();
    let mut samples = Vec::new();

    while let Some(Reverse((t, u))) = wakes.pop() {
        if t >= end {
            continue;
        }
        target.received += 1;
        let (status, latency, request_bytes, response_bytes) = match queue.admit(&target.model, t) {
            None => (SampleStatus::HttpError(503), 0, target.model.request_bytes, 0),
            Some(done) => {
                let (code, req, resp) = match &mut target.backend {
                    Backend::Stub => (200, target.model.request_bytes, target.model.response_bytes),
                    Backend::Service(svc) => svc.call(spec, target.epoch + (t / 1_000_000_000) as i64).await?,
                };
                if done - t > timeout {
                    (SampleStatus::Timeout, timeout, req, 0)
                } else {
                    (SampleStatus::from_http(code), done - t, req, resp)
                }
            }
        };
        samples.push(Sample { send_time: t, latency, status, request_bytes, response_bytes, user_index: u });

        let delay = secs_to_ns(next_arrival_delay(spec.pattern, &mut rngs[u], spec));
        let next = if spec.pattern.is_closed_loop() { (t + latency + delay).max(t + pacing) } else { t + delay };
        wakes.push(Reverse((next.max(t + 1), u)));
    }
    target.advance(spec.duration + spec.request_timeout);
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate_spec, Pattern};
    use super::*;

    fn run(spec: &WorkloadSpec, model: StubModel) -> (Vec<Sample>, u64) {
        let mut target = SimTarget::stub(model);
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let samples = rt.block_on(simulate(spec, &mut target)).unwrap();
        (samples, target.received())
    }

    #[test]
    fn fifo_queue_model() {
        let model = StubModel::capacity(10.0, 1, 1);
        let mut q = Queue::default();
        assert_eq!(q.admit(&model, 0), Some(100_000_000));
        assert_eq!(q.admit(&model, 10), Some(200_000_000));
        assert_eq!(q.admit(&model, 20), None);
        assert_eq!(q.admit(&model, 100_000_000), Some(300_000_000));
        assert_eq!(q.admit(&model, 400_000_000), Some(500_000_000));
    }

    #[test]
    fn closed_loop_arithmetic() {
        let spec = WorkloadSpec { pattern: Pattern::Uniform, users: 10, duration: 5.0, warmup: 0.0, ..WorkloadSpec::default() };
        let (samples, received) = run(&spec, StubModel::uncapped(0.001));
        assert!((48..=52).contains(&samples.len()), "{}", samples.len());
        assert_eq!(received, samples.len() as u64);
    }

    #[test]
    fn zero_duration_is_empty() {
        let spec = WorkloadSpec { duration: 0.0, users: 5, ..WorkloadSpec::default() };
        assert!(run(&spec, StubModel::uncapped(0.001)).0.is_empty());
    }

    #[test]
    fn binomial_is_paced_by_the_cap() {
        let spec = WorkloadSpec { pattern: Pattern::Binomial, users: 2, duration: 1.0, per_user_rate_cap: 100.0, warmup: 0.0, ..WorkloadSpec::default() };
        let (samples, _) = run(&spec, StubModel::uncapped(0.0001));
        assert_eq!(samples.len(), 200);
    }

    #[test]
    fn saturation_clamps_throughput() {
        let spec = WorkloadSpec { pattern: Pattern::Poisson, users: 1000, lambda: 1.0, duration: 30.0, seed: 3, ..WorkloadSpec::default() };
        let (samples, _) = run(&spec, StubModel::capacity(100.0, 1, 10));
        let r = aggregate_spec(&spec, &samples);
        assert!((r.throughput - 100.0).abs() < 5.0, "{}", r.throughput);
    }

    #[test]
    fn slow_requests_time_out() {
        let spec = WorkloadSpec { users: 1, duration: 30.0, request_timeout: 1.0, think_time: 0.0, warmup: 0.0, ..WorkloadSpec::default() };
        let (samples, _) = run(&spec, StubModel::uncapped(2.0));
        assert!(samples.iter().all(|s| s.status == SampleStatus::Timeout && s.latency == 1_000_000_000));
        assert_eq!(samples.len(), 30);
    }

    #[test]
    fn same_seed_same_samples() {
        let spec = WorkloadSpec { pattern: Pattern::Poisson, users: 50, lambda: 0.5, duration: 20.0, seed: 11, ..WorkloadSpec::default() };
        let model = StubModel::capacity(20.0, 2, 5);
        assert_eq!(run(&spec, model.clone()).0, run(&spec, model.clone()).0);
        let other = WorkloadSpec { seed: 12, ..spec.clone() };
        assert_ne!(run(&spec, model.clone()).0, run(&other, model).0);
    }
}
