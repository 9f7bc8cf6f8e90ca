use super::{aggregate_spec, run_workload, simulate, BenchError, Pattern, SimTarget, StubModel, StubServer, WorkloadSpec};

/// CDF of the exponential distribution with rate `lambda`.
pub fn exp_cdf(lambda: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-lambda * x).exp()
    }
}

/// Kolmogorov-Smirnov statistic of `samples` against the continuous CDF `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value for `n` samples at level `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Outcome of a closed-loop response-time law check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawCheck {
    /// users / (think time + stub latency), requests per second.
    pub predicted: f64,
    pub measured: f64,
    pub passed: bool,
}

impl LawCheck {
    pub fn relative_error(&self) -> f64 {
        (self.measured - self.predicted).abs() / self.predicted
    }
}

/// Drives `users` uniform closed-loop users with `think_time` against a
/// stub answering after `stub_latency` seconds with ample capacity, and
/// checks the measured throughput against the interactive response-time
/// law within 10%. `live` runs over real HTTP for `duration` seconds,
/// otherwise in virtual time.
pub async fn selftest_response_law(stub_latency: f64, users: usize, think_time: f64, duration: f64, live: bool) -> Result<LawCheck, BenchError> {
    let model = StubModel::uncapped(stub_latency);
    let mut spec = WorkloadSpec { pattern: Pattern::Uniform, users, think_time, duration, seed: 1, ..WorkloadSpec::default() };
    let samples = if live {
        let stub = StubServer::start(model).await?;
        spec.target = stub.url();
        let samples = run_workload(&spec).await;
        stub.shutdown().await;
        samples?
    } else {
        simulate(&spec, &mut SimTarget::stub(model)).await?
    };
    let measured = aggregate_spec(&spec, &samples).throughput;
    let predicted = users as f64 / (think_time + stub_latency);
    let passed = (measured - predicted).abs() <= 0.1 * predicted;
    Ok(LawCheck { predicted, measured, passed })
}
