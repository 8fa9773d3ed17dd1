//! Method comparison over a test split: the noisy input, trained models and
//! filters, reported side by side as CSV or Markdown.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterSpec};
use crate::metrics::{aggregate_reports, evaluate, MetricsReport};
use crate::model::Checkpoint;
use crate::windowing::{plan_windows, smooth_with_checkpoint};

pub const INPUT_ROW: &str = "input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub accel: f64,
    pub mpjpe: f64,
    pub pa_mpjpe: Option<f64>,
    pub mpjpe_worst1: f64,
    pub accel_worst1: f64,
    /// Windows per second; filters count each output frame as one window.
    /// Absent for the unprocessed input.
    pub throughput: Option<f64>,
}

impl BenchRow {
    fn from_report(method: String, r: &MetricsReport, throughput: Option<f64>) -> Self {
        Self {
            method,
            accel: r.accel,
            mpjpe: r.mpjpe,
            pa_mpjpe: r.pa_mpjpe,
            mpjpe_worst1: r.mpjpe_worst1,
            accel_worst1: r.accel_worst1,
            throughput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Full-precision CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,accel,mpjpe,pa_mpjpe,mpjpe_worst1,accel_worst1,throughput\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&r.method),
                r.accel,
                r.mpjpe,
                opt(r.pa_mpjpe),
                r.mpjpe_worst1,
                r.accel_worst1,
                opt(r.throughput)
            ));
        }
        out
    }

    /// Two-decimal table; errors are multiplied by `scale` first (e.g. 1000
    /// to show meters as millimeters).
    pub fn to_markdown(&self, scale: f64) -> String {
        let mut out = String::from(
            "| Method | Accel | MPJPE | PA-MPJPE | MPJPE-1% | Accel-1% | Windows/s |\n\
             |---|---:|---:|---:|---:|---:|---:|\n",
        );
        let opt = |v: Option<f64>, s: f64| v.map(|x| format!("{:.2}", x * s)).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.2} | {:.2} | {} | {:.2} | {:.2} | {} |\n",
                r.method.replace('|', "\\|"),
                r.accel * scale,
                r.mpjpe * scale,
                opt(r.pa_mpjpe, scale),
                r.mpjpe_worst1 * scale,
                r.accel_worst1 * scale,
                opt(r.throughput, 1.0)
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn check_test_set(test: &[Pair]) -> Result<()> {
    if test.is_empty() {
        return Err(Error::config("the test split is empty"));
    }
    Ok(())
}

pub fn bench_input(test: &[Pair]) -> Result<BenchRow> {
    check_test_set(test)?;
    let reports = test
        .iter()
        .map(|p| evaluate(&p.noisy, &p.clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchRow::from_report(INPUT_ROW.into(), &aggregate_reports(&reports)?, None))
}

/// Smooths every test sequence with step `step_s`, timing the smoothing only.
pub fn bench_model(name: &str, ck: &Checkpoint, test: &[Pair], step_s: usize) -> Result<BenchRow> {
    check_test_set(test)?;
    let t = ck.model.window();
    let mut windows = 0usize;
    let mut elapsed = 0.0;
    let mut reports = Vec::with_capacity(test.len());
    for p in test {
        windows += plan_windows(p.noisy.len().max(t), t, step_s)?.starts.len();
        let started = Instant::now();
        let out = smooth_with_checkpoint(ck, &p.noisy, step_s)?;
        elapsed += started.elapsed().as_secs_f64();
        reports.push(evaluate(&out, &p.clean)?);
    }
    Ok(BenchRow::from_report(
        name.into(),
        &aggregate_reports(&reports)?,
        Some(windows as f64 / elapsed.max(1e-9)),
    ))
}

pub fn bench_filter(spec: &FilterSpec, test: &[Pair]) -> Result<BenchRow> {
    check_test_set(test)?;
    spec.validate()?;
    let mut frames = 0usize;
    let mut elapsed = 0.0;
    let mut reports = Vec::with_capacity(test.len());
    for p in test {
        frames += p.noisy.len();
        let started = Instant::now();
        let out = apply_filter(&p.noisy, spec)?;
        elapsed += started.elapsed().as_secs_f64();
        reports.push(evaluate(&out, &p.clean)?);
    }
    Ok(BenchRow::from_report(
        spec.label(),
        &aggregate_reports(&reports)?,
        Some(frames as f64 / elapsed.max(1e-9)),
    ))
}

/// Input baseline, then each model, then each filter.
pub fn run_bench(test: &[Pair], models: &[(String, &Checkpoint)], filters: &[FilterSpec]) -> Result<BenchReport> {
    let mut rows = vec![bench_input(test)?];
    for (name, ck) in models {
        rows.push(bench_model(name, ck, test, 1)?);
    }
    for f in filters {
        rows.push(bench_filter(f, test)?);
    }
    Ok(BenchReport { rows })
}

/// Name of the model row for window size `w` in a window sweep.
pub fn sweep_row_name(w: usize) -> String {
    format!("smoothnet W={w}")
}

/// Gaussian filters over a range of strengths, each with a window of about
/// three standard deviations either side.
pub fn gaussian_grid() -> Vec<FilterSpec> {
    let mut grid = Vec::new();
    for i in 1..=16 {
        let sigma = 0.5 * i as f64;
        let window = 2 * (3.0 * sigma).ceil() as usize + 1;
        grid.push(FilterSpec::gaussian(window, sigma));
    }
    for (window, sigma) in [(9, 8.0), (17, 16.0), (33, 32.0), (129, 4.0)] {
        grid.push(FilterSpec::gaussian(window, sigma));
    }
    grid
}

/// Model row against the best Gaussian row of comparable acceleration error.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComparison {
    pub model_mpjpe: f64,
    pub model_accel: f64,
    /// Gaussian rows considered.
    pub grid_size: usize,
    /// Rows whose Accel lies within the band around the model's.
    pub comparable: Vec<BenchRow>,
    pub best: Option<BenchRow>,
}

impl GaussianComparison {
    /// True when some comparable filter exists and none of them beats the
    /// model's MPJPE.
    pub fn model_wins(&self) -> bool {
        self.best.as_ref().is_some_and(|b| self.model_mpjpe <= b.mpjpe)
    }
}

pub fn compare_with_gaussians(report: &BenchReport, model_row: &str, band: f64) -> Result<GaussianComparison> {
    let model = report
        .row(model_row)
        .ok_or_else(|| Error::config(format!("report has no row '{model_row}'")))?;
    let gaussians: Vec<&BenchRow> = report.rows.iter().filter(|r| r.method.starts_with("gaussian(")).collect();
    let comparable: Vec<BenchRow> = gaussians
        .iter()
        .filter(|r| (r.accel - model.accel).abs() <= band * model.accel)
        .map(|r| (*r).clone())
        .collect();
    let best = comparable.iter().min_by(|a, b| a.mpjpe.total_cmp(&b.mpjpe)).cloned();
    Ok(GaussianComparison {
        model_mpjpe: model.mpjpe,
        model_accel: model.accel,
        grid_size: gaussians.len(),
        comparable,
        best,
    })
}
