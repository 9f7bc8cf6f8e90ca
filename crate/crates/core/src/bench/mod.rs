//! Load harness: binomial, uniform and Poisson workloads, metric
//! aggregation, three-round orchestration and data-file export.
//!
//! A workload runs either live, against an HTTP target in real time, or
//! simulated, against a [`SimTarget`] in virtual time. The simulated form
//! models a fixed-capacity server (FIFO queue, fixed service time) and
//! can route every admitted request through the real service router, so
//! a 60 s cell costs far less than 60 s of wall time and repeats exactly.
//!
//! ```
//! use capodaz::bench::{aggregate_spec, simulate, Pattern, SimTarget, StubModel, WorkloadSpec};
//!
//! # tokio::runtime::Runtime::new().unwrap().block_on(async {
//! let spec = WorkloadSpec { pattern: Pattern::Uniform, users: 10, duration: 5.0, warmup: 0.0, ..WorkloadSpec::default() };
//! let mut target = SimTarget::stub(StubModel::uncapped(0.002));
//! let samples = simulate(&spec, &mut target).await.unwrap();
//! let report = aggregate_spec(&spec, &samples);
//! assert!((45..=55).contains(&report.success_count));
//! # });
//! ```

mod export;
mod live;
mod metrics;
mod rounds;
mod sim;
mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_report, read_report_csv, ExportFormat};
pub use live::{run_workload, StubServer};
pub use metrics::{aggregate, aggregate_spec, bucket_edges, bucket_index, MetricsReport};
pub use rounds::{run_rounds, Driver, PlanFile, Round, RoundKind, RoundPlan, RoundResults, DEFAULT_COOL_DOWN};
pub use sim::{simulate, ServiceTarget, SimTarget, StubModel};
pub use stats::{exp_cdf, ks_critical_value, ks_statistic, selftest_response_law, LawCheck};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("target resolution failed: {0}")]
    TargetResolution(String),
    #[error("could not obtain a token: {0}")]
    TokenUnavailable(String),
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("plan: {0}")]
    PlanParse(String),
    #[error("report: {0}")]
    ReportParse(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Closed loop, no think time, paced by the per-user rate cap.
    Binomial,
    /// Closed loop with a fixed think time between a response and the next request.
    Uniform,
    /// Open loop, exponential inter-arrival times per user.
    Poisson,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Binomial, Pattern::Uniform, Pattern::Poisson];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Binomial => "binomial",
            Pattern::Uniform => "uniform",
            Pattern::Poisson => "poisson",
        }
    }

    pub fn is_closed_loop(self) -> bool {
        self != Pattern::Poisson
    }
}

impl std::str::FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown pattern {s:?}; expected binomial, uniform or poisson"))
    }
}

/// Where the bearer token of each request comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TokenSource {
    #[default]
    None,
    Bearer { token: String },
    /// Obtained once from the target's `/token` endpoint before the run.
    ClientCredentials { client_id: String, client_secret: String, audience: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestTemplate {
    pub method: String,
    pub path: String,
    pub body: String,
    pub token: TokenSource,
}

impl Default for RequestTemplate {
    fn default() -> Self {
        RequestTemplate { method: "GET".into(), path: "/".into(), body: String::new(), token: TokenSource::None }
    }
}

impl RequestTemplate {
    /// A read of `resource` on the service, authorized by a client-credentials token.
    pub fn resource_read(resource: &str, client_id: &str, secret: &str) -> Self {
        RequestTemplate {
            method: "GET".into(),
            path: format!("/resource/{}", resource.trim_start_matches('/')),
            body: String::new(),
            token: TokenSource::ClientCredentials {
                client_id: client_id.into(),
                client_secret: secret.into(),
                audience: resource.into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub users: usize,
    /// Seconds.
    pub duration: f64,
    /// Seconds between a response and the next request (uniform only).
    pub think_time: f64,
    /// Arrivals per second per user (Poisson only).
    pub lambda: f64,
    /// Requests per second per user (binomial only).
    pub per_user_rate_cap: f64,
    /// Seconds.
    pub request_timeout: f64,
    pub target: String,
    pub request: RequestTemplate,
    pub seed: u64,
    /// Leading fraction of the duration excluded from aggregation.
    pub warmup: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            pattern: Pattern::Uniform,
            users: 1000,
            duration: 60.0,
            think_time: 1.0,
            lambda: 1.0,
            per_user_rate_cap: 1000.0,
            request_timeout: 10.0,
            target: "http://127.0.0.1:8080".into(),
            request: RequestTemplate::default(),
            seed: 0,
            warmup: 0.05,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.into()));
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be a non-negative number of seconds");
        }
        if self.pattern == Pattern::Poisson && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive for the Poisson pattern");
        }
        if self.pattern == Pattern::Uniform && !(self.think_time >= 0.0) {
            return bad("think_time must be non-negative");
        }
        if self.pattern == Pattern::Binomial && !(self.per_user_rate_cap > 0.0) {
            return bad("per_user_rate_cap must be positive");
        }
        if !(self.request_timeout > 0.0) {
            return bad("request_timeout must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad("warmup must be in [0, 1)");
        }
        Ok(())
    }

    /// Short name used in reports and file names: `b250`, `u1000`, `p1000-0.2`.
    pub fn label(&self) -> String {
        match self.pattern {
            Pattern::Binomial => format!("b{}", self.users),
            Pattern::Uniform => format!("u{}", self.users),
            Pattern::Poisson => format!("p{}-{}", self.users, self.lambda),
        }
    }

    /// Pattern, users and rate recovered from a [`label`](Self::label).
    pub fn from_label(label: &str) -> Option<WorkloadSpec> {
        let (pattern, rest) = match label.split_at_checked(1)? {
            ("b", r) => (Pattern::Binomial, r),
            ("u", r) => (Pattern::Uniform, r),
            ("p", r) => (Pattern::Poisson, r),
            _ => return None,
        };
        let mut spec = WorkloadSpec { pattern, ..WorkloadSpec::default() };
        match pattern {
            Pattern::Poisson => {
                let (users, lambda) = rest.split_once('-')?;
                spec.users = users.parse().ok()?;
                spec.lambda = lambda.parse().ok()?;
            }
            _ => spec.users = rest.parse().ok()?,
        }
        Some(spec)
    }

    /// Seconds of the run that count towards the report.
    pub fn measured_window(&self) -> (f64, f64) {
        (self.duration * self.warmup, self.duration)
    }

    /// Minimum spacing between two sends of one binomial user.
    fn pacing(&self) -> f64 {
        match self.pattern {
            Pattern::Binomial => 1.0 / self.per_user_rate_cap,
            _ => 0.0,
        }
    }
}

/// The random stream of one virtual user.
pub fn user_rng(seed: u64, user_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_index as u64);
    rng
}

/// Delay in seconds before a user's next request: after the previous
/// response for the closed-loop patterns, after the previous arrival for
/// Poisson.
pub fn next_arrival_delay(pattern: Pattern, rng: &mut impl Rng, spec: &WorkloadSpec) -> f64 {
    match pattern {
        Pattern::Binomial => 0.0,
        Pattern::Uniform => spec.think_time,
        Pattern::Poisson => Exp::new(spec.lambda).expect("positive rate").sample(rng),
    }
}

/// Offset of a user's first request, spreading closed-loop users over one think time.
fn first_arrival(rng: &mut impl Rng, spec: &WorkloadSpec) -> f64 {
    match spec.pattern {
        Pattern::Binomial => 0.0,
        Pattern::Uniform => rng.gen::<f64>() * spec.think_time,
        Pattern::Poisson => next_arrival_delay(Pattern::Poisson, rng, spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleStatus {
    Success,
    HttpError(u16),
    Timeout,
    ConnError,
}

impl SampleStatus {
    pub fn is_success(self) -> bool {
        self == SampleStatus::Success
    }

    fn from_http(code: u16) -> Self {
        if (200..300).contains(&code) {
            SampleStatus::Success
        } else {
            SampleStatus::HttpError(code)
        }
    }
}

/// One issued request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    /// Nanoseconds since the start of the run.
    pub send_time: u64,
    pub latency: u64,
    pub status: SampleStatus,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub user_index: usize,
}

pub(crate) fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round().max(0.0) as u64
}

/// Approximate HTTP/1.1 size of a message: start line, headers, blank line and body.
pub(crate) fn http_message_bytes<'a>(start_line: usize, headers: impl Iterator<Item = (&'a str, usize)>, body: usize) -> u64 {
    let head: usize = headers.map(|(name, value)| name.len() + 2 + value + 2).sum();
    (start_line + 2 + head + 2 + body) as u64
}
