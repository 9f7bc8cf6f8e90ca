//! The three-round process: binomial, uniform, then Poisson at the elected population.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{aggregate, aggregate_spec, run_workload, simulate, BenchError, MetricsReport, Pattern, RequestTemplate, SimTarget, WorkloadSpec};

/// Seconds between two runs.
pub const DEFAULT_COOL_DOWN: f64 = 5.0;

const POPULATIONS: [usize; 5] = [250, 500, 1000, 2000, 4000];
const LAMBDAS: [f64; 4] = [1.0, 0.2, 0.0022, 0.0011];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundKind {
    BinomialRound,
    UniformRound,
    PoissonRound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub kind: RoundKind,
    pub specs: Vec<WorkloadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub rounds: Vec<Round>,
    /// Seconds of idle time between runs.
    pub cool_down: f64,
}

impl RoundPlan {
    /// Binomial and uniform over 250..4000 users, then Poisson at 1000
    /// users for each rate, every cell shaped after `template`.
    pub fn default_plan(template: &WorkloadSpec) -> Self {
        PlanFile::from_template(template).into_plan()
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let file: PlanFile = toml::from_str(text).map_err(|e| BenchError::PlanParse(e.to_string()))?;
        let plan = file.into_plan();
        for spec in plan.specs() {
            spec.validate()?;
        }
        Ok(plan)
    }

    pub fn specs(&self) -> impl Iterator<Item = &WorkloadSpec> {
        self.rounds.iter().flat_map(|r| &r.specs)
    }

    pub fn len(&self) -> usize {
        self.specs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinomialSection {
    pub users: Vec<usize>,
    pub per_user_rate_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformSection {
    pub users: Vec<usize>,
    pub think_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonSection {
    pub users: usize,
    pub lambda: Vec<f64>,
}

impl Default for BinomialSection {
    fn default() -> Self {
        BinomialSection { users: POPULATIONS.to_vec(), per_user_rate_cap: 1000.0 }
    }
}

impl Default for UniformSection {
    fn default() -> Self {
        UniformSection { users: POPULATIONS.to_vec(), think_time: 1.0 }
    }
}

impl Default for PoissonSection {
    fn default() -> Self {
        PoissonSection { users: 1000, lambda: LAMBDAS.to_vec() }
    }
}

/// The TOML plan file. Absent sections take the three-round defaults; an
/// empty `users` or `lambda` list drops a round.
///
/// ```toml
/// target = "http://127.0.0.1:8080"
/// duration = 60
/// seed = 7
/// cool_down = 5
///
/// [request]
/// path = "/resource/vehicle/localisation"
/// token = { kind = "client-credentials", client_id = "CAPODAZ-client", client_secret = "secret", audience = "vehicle/localisation" }
///
/// [binomial]
/// users = [250, 500, 1000, 2000, 4000]
/// per_user_rate_cap = 1000
///
/// [uniform]
/// users = [250, 500, 1000, 2000, 4000]
/// think_time = 1
///
/// [poisson]
/// users = 1000
/// lambda = [1, 0.2, 0.0022, 0.0011]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanFile {
    pub target: String,
    pub duration: f64,
    pub seed: u64,
    pub cool_down: f64,
    pub warmup: f64,
    pub request_timeout: f64,
    pub request: RequestTemplate,
    pub binomial: BinomialSection,
    pub uniform: UniformSection,
    pub poisson: PoissonSection,
}

impl Default for PlanFile {
    fn default() -> Self {
        PlanFile::from_template(&WorkloadSpec::default())
    }
}

impl PlanFile {
    fn from_template(t: &WorkloadSpec) -> Self {
        PlanFile {
            target: t.target.clone(),
            duration: t.duration,
            seed: t.seed,
            cool_down: DEFAULT_COOL_DOWN,
            warmup: t.warmup,
            request_timeout: t.request_timeout,
            request: t.request.clone(),
            binomial: BinomialSection::default(),
            uniform: UniformSection::default(),
            poisson: PoissonSection::default(),
        }
    }

    pub fn into_plan(self) -> RoundPlan {
        let base = WorkloadSpec {
            target: self.target.clone(),
            duration: self.duration,
            seed: self.seed,
            warmup: self.warmup,
            request_timeout: self.request_timeout,
            request: self.request.clone(),
            ..WorkloadSpec::default()
        };
        let binomial = self.binomial.users.iter().map(|&users| WorkloadSpec {
            pattern: Pattern::Binomial,
            users,
            per_user_rate_cap: self.binomial.per_user_rate_cap,
            ..base.clone()
        });
        let uniform = self.uniform.users.iter().map(|&users| WorkloadSpec {
            pattern: Pattern::Uniform,
            users,
            think_time: self.uniform.think_time,
            ..base.clone()
        });
        let poisson = self.poisson.lambda.iter().map(|&lambda| WorkloadSpec {
            pattern: Pattern::Poisson,
            users: self.poisson.users,
            lambda,
            ..base.clone()
        });
        let rounds = [
            (RoundKind::BinomialRound, binomial.collect::<Vec<_>>()),
            (RoundKind::UniformRound, uniform.collect()),
            (RoundKind::PoissonRound, poisson.collect()),
        ]
        .into_iter()
        .filter(|(_, specs)| !specs.is_empty())
        .map(|(kind, specs)| Round { kind, specs })
        .collect();
        RoundPlan { rounds, cool_down: self.cool_down }
    }
}

/// How a plan is executed.
pub enum Driver {
    /// Real time over HTTP, against each spec's target.
    Live,
    Simulated(SimTarget),
}

#[derive(Debug)]
pub struct RoundResults {
    pub reports: Vec<(WorkloadSpec, MetricsReport)>,
    /// Set when a target could not be resolved; later specs were skipped.
    pub aborted: Option<BenchError>,
}

/// Runs every spec of `plan` in order, idling `plan.cool_down` between runs.
pub async fn run_rounds(plan: &RoundPlan, driver: &mut Driver) -> RoundResults {
    let mut reports = Vec::new();
    for (i, spec) in plan.specs().enumerate() {
        if i > 0 {
            match driver {
                Driver::Live => tokio::time::sleep(Duration::from_secs_f64(plan.cool_down)).await,
                Driver::Simulated(target) => target.advance(plan.cool_down),
            }
        }
        let samples = match driver {
            Driver::Live => run_workload(spec).await,
            Driver::Simulated(target) => simulate(spec, target).await,
        };
        let report = match samples {
            Ok(samples) => aggregate_spec(spec, &samples),
            Err(e @ BenchError::TargetResolution(_)) => return RoundResults { reports, aborted: Some(e) },
            Err(e) => {
                tracing::warn!(spec = %spec.label(), error = %e, "run failed; reporting no samples");
                MetricsReport { label: spec.label(), ..aggregate(&[], 0.0) }
            }
        };
        tracing::info!(spec = %report.label, throughput = report.throughput, "run complete");
        reports.push((spec.clone(), report));
    }
    RoundResults { reports, aborted: None }
}
