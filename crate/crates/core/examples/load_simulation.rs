//! One workload cell in virtual time: closed-loop users against a stub with
//! fixed capacity, then the same cell open-loop.
//!
//! `cargo run --example load_simulation`

use capodaz::bench::{aggregate_spec, simulate, Pattern, SimTarget, StubModel, WorkloadSpec};

#[tokio::main]
async fn main() {
    // 500 requests/s: one worker, 2 ms per request, 4096 queue slots
    let model = StubModel::capacity(500.0, 1, 4096);
    for spec in [
        WorkloadSpec { pattern: Pattern::Uniform, users: 250, think_time: 1.0, ..WorkloadSpec::default() },
        WorkloadSpec { pattern: Pattern::Uniform, users: 1000, think_time: 1.0, ..WorkloadSpec::default() },
        WorkloadSpec { pattern: Pattern::Binomial, users: 500, ..WorkloadSpec::default() },
        WorkloadSpec { pattern: Pattern::Poisson, users: 1000, lambda: 0.2, ..WorkloadSpec::default() },
    ] {
        let samples = simulate(&spec, &mut SimTarget::stub(model.clone())).await.unwrap();
        let r = aggregate_spec(&spec, &samples);
        println!(
            "{:<12} {:>8.1} req/s  mean {:>8.2} ms  sd {:>7.2} ms  mode <= {} s  ok {} failed {}",
            r.label, r.throughput, r.mean_latency, r.latency_stddev, r.mode_bucket, r.success_count, r.failure_count
        );
    }
}
