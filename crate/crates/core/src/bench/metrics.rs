use std::sync::OnceLock;

use super::{secs_to_ns, Sample, WorkloadSpec};

/// Aggregated results of one workload run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    /// Milliseconds, over successful requests.
    pub mean_latency: f64,
    pub max_latency: f64,
    /// Population standard deviation (divides by n).
    pub latency_stddev: f64,
    /// Upper edge, in seconds, of the latency bucket with the most successes.
    pub mode_bucket: f64,
    /// Successful requests per second.
    pub throughput: f64,
    pub success_count: u64,
    pub failure_count: u64,
    pub success_fraction: f64,
    /// Request plus response bytes per second, in KB/s.
    pub load_kbps: f64,
    /// (bucket upper edge in seconds, cumulative fraction of successes).
    pub time_to_success_cdf: Vec<(f64, f64)>,
}

impl MetricsReport {
    /// Field names in declaration order; the CSV header.
    pub const FIELDS: [&'static str; 11] = [
        "label",
        "mean_latency",
        "max_latency",
        "latency_stddev",
        "mode_bucket",
        "throughput",
        "success_count",
        "failure_count",
        "success_fraction",
        "load_kbps",
        "time_to_success_cdf",
    ];

    /// Per-bucket fraction of successes, recovered from the CDF.
    pub fn histogram(&self) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.time_to_success_cdf
            .iter()
            .map(|&(edge, cum)| {
                let h = cum - prev;
                prev = cum;
                (edge, h)
            })
            .collect()
    }
}

/// Bucket upper edges in seconds: {1, 2.5, 5} x 10^k for k in -4..=2.
pub fn bucket_edges() -> &'static [f64] {
    static EDGES: OnceLock<Vec<f64>> = OnceLock::new();
    EDGES.get_or_init(|| {
        (-4..=2)
            .flat_map(|k| ["1", "2.5", "5"].map(|m| format!("{m}e{k}").parse::<f64>().expect("literal")))
            .collect()
    })
}

fn edges_ns() -> &'static [u64] {
    static EDGES: OnceLock<Vec<u64>> = OnceLock::new();
    EDGES.get_or_init(|| bucket_edges().iter().map(|&e| secs_to_ns(e)).collect())
}

/// Index of the bucket `[previous edge, edge)` holding a latency in
/// nanoseconds. Latencies past the last edge land in the last bucket.
pub fn bucket_index(latency_ns: u64) -> usize {
    let edges = edges_ns();
    edges.partition_point(|&e| e <= latency_ns).min(edges.len() - 1)
}

/// Aggregates samples over a wall duration in seconds.
pub fn aggregate(samples: &[Sample], wall_duration: f64) -> MetricsReport {
    let edges = bucket_edges();
    let ok: Vec<f64> = samples.iter().filter(|s| s.status.is_success()).map(|s| s.latency as f64 / 1e6).collect();
    let success_count = ok.len() as u64;
    let failure_count = samples.len() as u64 - success_count;

    let mut counts = vec![0u64; edges.len()];
    for s in samples.iter().filter(|s| s.status.is_success()) {
        counts[bucket_index(s.latency)] += 1;
    }
    let mut mode = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[mode] {
            mode = i;
        }
    }
    let mut cum = 0;
    let time_to_success_cdf = edges
        .iter()
        .zip(&counts)
        .map(|(&e, &c)| {
            cum += c;
            (e, if success_count == 0 { 0.0 } else { cum as f64 / success_count as f64 })
        })
        .collect();

    let n = ok.len() as f64;
    let mean = if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / n };
    let var = if ok.is_empty() { 0.0 } else { ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n };
    let bytes: u64 = samples.iter().map(|s| s.request_bytes + s.response_bytes).sum();
    let per_sec = |x: f64| if wall_duration > 0.0 { x / wall_duration } else { 0.0 };

    MetricsReport {
        label: String::new(),
        mean_latency: mean,
        max_latency: ok.iter().copied().fold(0.0, f64::max),
        latency_stddev: var.sqrt(),
        mode_bucket: if success_count == 0 { 0.0 } else { edges[mode] },
        throughput: per_sec(success_count as f64),
        success_count,
        failure_count,
        success_fraction: if samples.is_empty() { 0.0 } else { success_count as f64 / samples.len() as f64 },
        load_kbps: per_sec(bytes as f64) / 1000.0,
        time_to_success_cdf,
    }
}

/// Drops the warm-up samples of `spec` and aggregates the rest.
pub fn aggregate_spec(spec: &WorkloadSpec, samples: &[Sample]) -> MetricsReport {
    let (from, to) = spec.measured_window();
    let cut = secs_to_ns(from);
    let kept: Vec<Sample> = samples.iter().filter(|s| s.send_time >= cut).copied().collect();
    let mut report = aggregate(&kept, to - from);
    report.label = spec.label();
    report
}
