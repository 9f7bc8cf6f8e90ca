//! CSV and plot-data output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BenchError, MetricsReport, Pattern, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// `report.csv`, one row per report.
    Csv,
    /// Whitespace-separated series, one file per figure.
    PlotData,
}

fn cdf_cell(cdf: &[(f64, f64)]) -> String {
    cdf.iter().map(|(e, c)| format!("{e}:{c}")).collect::<Vec<_>>().join(";")
}

fn write_csv(reports: &[(WorkloadSpec, MetricsReport)], path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MetricsReport::FIELDS)?;
    for (_, r) in reports {
        w.write_record([
            r.label.clone(),
            r.mean_latency.to_string(),
            r.max_latency.to_string(),
            r.latency_stddev.to_string(),
            r.mode_bucket.to_string(),
            r.throughput.to_string(),
            r.success_count.to_string(),
            r.failure_count.to_string(),
            r.success_fraction.to_string(),
            r.load_kbps.to_string(),
            cdf_cell(&r.time_to_success_cdf),
        ])?;
    }
    w.flush()
}

fn series(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    for row in rows {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

fn throughput_of(reports: &[(WorkloadSpec, MetricsReport)], pattern: Pattern, users: usize) -> f64 {
    reports
        .iter()
        .find(|(s, _)| s.pattern == pattern && s.users == users)
        .map_or(f64::NAN, |(_, r)| r.throughput)
}

fn plot_data(reports: &[(WorkloadSpec, MetricsReport)], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> std::io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        files.push(path);
        Ok(())
    };

    for (spec, r) in reports {
        let head = format!("{} users={} pattern={}", r.label, spec.users, spec.pattern.as_str());
        emit(
            format!("cdf_{}.dat", r.label),
            series(&[&head, "time-to-success CDF", "bucket_upper_edge_s cumulative_fraction"], r.time_to_success_cdf.iter().map(|&(e, c)| vec![e, c])),
        )?;
        emit(
            format!("hist_{}.dat", r.label),
            series(&[&head, "latency histogram of successful requests", "bucket_upper_edge_s fraction"], r.histogram().into_iter().map(|(e, h)| vec![e, h])),
        )?;
    }

    let mut users: Vec<usize> = reports.iter().filter(|(s, _)| s.pattern.is_closed_loop()).map(|(s, _)| s.users).collect();
    users.sort_unstable();
    users.dedup();
    let rows = users.iter().map(|&n| vec![n as f64, throughput_of(reports, Pattern::Binomial, n), throughput_of(reports, Pattern::Uniform, n)]);
    emit(
        "throughput_vs_users.dat".into(),
        series(&["throughput of successful requests (req/s); nan where not run", "users binomial uniform"], rows),
    )?;

    let poisson: Vec<&(WorkloadSpec, MetricsReport)> = reports.iter().filter(|(s, _)| s.pattern == Pattern::Poisson).collect();
    if !poisson.is_empty() {
        let rows = poisson.iter().map(|(s, r)| vec![s.lambda, r.throughput, throughput_of(reports, Pattern::Uniform, s.users)]);
        emit(
            "throughput_poisson_vs_uniform.dat".into(),
            series(&["throughput (req/s) per lambda against the uniform run at the same population", "lambda poisson uniform"], rows),
        )?;
    }
    Ok(files)
}

fn parse_cdf(cell: &str) -> Option<Vec<(f64, f64)>> {
    if cell.is_empty() {
        return Some(Vec::new());
    }
    cell.split(';')
        .map(|pair| {
            let (e, c) = pair.split_once(':')?;
            Some((e.parse().ok()?, c.parse().ok()?))
        })
        .collect()
}

/// Reads a `report.csv` written by [`export_report`].
pub fn read_report_csv(path: &Path) -> Result<Vec<MetricsReport>, BenchError> {
    let bad = |m: String| BenchError::ReportParse(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(MetricsReport::FIELDS) {
        return Err(bad("unexpected columns".into()));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let f = |k: usize| row[k].parse::<f64>().map_err(|e| bad(format!("line {line}: {}: {e}", MetricsReport::FIELDS[k])));
        let n = |k: usize| row[k].parse::<u64>().map_err(|e| bad(format!("line {line}: {}: {e}", MetricsReport::FIELDS[k])));
        out.push(MetricsReport {
            label: row[0].to_owned(),
            mean_latency: f(1)?,
            max_latency: f(2)?,
            latency_stddev: f(3)?,
            mode_bucket: f(4)?,
            throughput: f(5)?,
            success_count: n(6)?,
            failure_count: n(7)?,
            success_fraction: f(8)?,
            load_kbps: f(9)?,
            time_to_success_cdf: parse_cdf(&row[10]).ok_or_else(|| bad(format!("line {line}: time_to_success_cdf")))?,
        });
    }
    Ok(out)
}

/// Writes `reports` into `dir` and returns the files written.
pub fn export_report(reports: &[(WorkloadSpec, MetricsReport)], format: ExportFormat, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match format {
        ExportFormat::Csv => {
            let path = dir.join("report.csv");
            write_csv(reports, &path)?;
            Ok(vec![path])
        }
        ExportFormat::PlotData => plot_data(reports, dir),
    }
}
