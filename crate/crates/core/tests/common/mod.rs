#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use capodaz::clock::ManualClock;
use capodaz::service::{serve_state, ServiceConfig, ServiceHandle, ServiceState};

pub const NOW: i64 = 1_700_000_000;
pub const CLIENT: (&str, &str) = ("CAPODAZ-client", "secret");
pub const ADMIN: (&str, &str) = ("fleet-admin", "admin-secret");

pub fn examples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples")
}

/// The sample configuration on an ephemeral port.
pub fn sample_config() -> ServiceConfig {
    let text = std::fs::read_to_string(examples_dir().join("capodaz.toml")).unwrap();
    let mut cfg = ServiceConfig::from_toml(&text).unwrap();
    cfg.resolve_paths(&examples_dir());
    cfg.listen_address = "127.0.0.1:0".into();
    cfg.purge_interval = 0;
    cfg
}

pub async fn start_with(cfg: ServiceConfig, clock: Arc<ManualClock>) -> ServiceHandle {
    let state = ServiceState::from_config(cfg).unwrap().with_clock(clock);
    serve_state(state).await.unwrap()
}

pub async fn start(clock: Arc<ManualClock>) -> ServiceHandle {
    start_with(sample_config(), clock).await
}
