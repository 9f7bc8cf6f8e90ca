//! The full three-round plan (binomial, uniform, Poisson) run in virtual
//! time against the in-process service, exported as CSV and plot data.
//!
//! `cargo run --release --example three_rounds [out-dir]`

use std::path::{Path, PathBuf};
use std::sync::Arc;

use capodaz::bench::{export_report, run_rounds, Driver, ExportFormat, RequestTemplate, RoundPlan, ServiceTarget, SimTarget, StubModel, WorkloadSpec};
use capodaz::clock::ManualClock;
use capodaz::service::{ServiceConfig, ServiceState};

#[tokio::main]
async fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("capodaz-rounds"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut cfg = ServiceConfig::from_toml(&std::fs::read_to_string(dir.join("capodaz.toml")).unwrap()).unwrap();
    cfg.resolve_paths(&dir);

    let epoch = 1_700_000_000;
    let clock = Arc::new(ManualClock::new(epoch));
    let state = Arc::new(ServiceState::from_config(cfg).unwrap().with_clock(clock.clone()));
    // every request runs the real token checks and policy evaluation; the
    // capacity model supplies the service time
    let target = SimTarget::service(ServiceTarget::new(state, clock), StubModel::capacity(500.0, 1, 4096), epoch);

    let template = WorkloadSpec { request: RequestTemplate::resource_read("vehicle/localisation", "CAPODAZ-client", "secret"), ..WorkloadSpec::default() };
    let plan = RoundPlan::default_plan(&template);
    let results = run_rounds(&plan, &mut Driver::Simulated(target)).await;
    for (_, r) in &results.reports {
        println!("{:<14} {:>8.1} req/s  mean {:>9.2} ms  ok {:>6} failed {:>6}", r.label, r.throughput, r.mean_latency, r.success_count, r.failure_count);
    }

    std::fs::create_dir_all(&out).unwrap();
    export_report(&results.reports, ExportFormat::Csv, &out).unwrap();
    export_report(&results.reports, ExportFormat::PlotData, &out).unwrap();
    println!("written to {}", out.display());
}
