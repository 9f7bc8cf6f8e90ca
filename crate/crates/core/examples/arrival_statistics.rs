//! Statistical checks on the load generator: exponential inter-arrival
//! times (Kolmogorov-Smirnov) and the closed-loop response-time law.
//!
//! `cargo run --example arrival_statistics`

use capodaz::bench::{exp_cdf, ks_critical_value, ks_statistic, selftest_response_law, simulate, Pattern, SimTarget, StubModel, WorkloadSpec};

#[tokio::main]
async fn main() {
    let lambda = 0.2;
    let spec = WorkloadSpec { pattern: Pattern::Poisson, users: 1000, lambda, duration: 60.0 / lambda, seed: 3, ..WorkloadSpec::default() };
    let samples = simulate(&spec, &mut SimTarget::stub(StubModel::uncapped(0.001))).await.unwrap();

    let mut per_user = vec![Vec::new(); spec.users];
    for s in &samples {
        per_user[s.user_index].push(s.send_time);
    }
    let gaps: Vec<f64> = per_user.iter().flat_map(|t| t.windows(2).take(10).map(|w| (w[1] - w[0]) as f64 / 1e9)).collect();
    let d = ks_statistic(&gaps, |x| exp_cdf(lambda, x));
    let crit = ks_critical_value(gaps.len(), 0.01);
    println!("{} gaps, KS D = {d:.4}, critical value at 1% = {crit:.4}: {}", gaps.len(), if d < crit { "exponential" } else { "rejected" });

    // X = N / (R + Z) for N users, response time R and think time Z
    for (users, latency) in [(100, 0.010), (500, 0.056)] {
        let law = selftest_response_law(latency, users, 1.0, 60.0, false).await.unwrap();
        println!("N={users} R={latency}: predicted {:.1} req/s, measured {:.1} req/s, within tolerance: {}", law.predicted, law.measured, law.passed);
    }
}
