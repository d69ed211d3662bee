//! Latency benchmarking: timed inference runs with warmup exclusion,
//! robust statistics, a rendered comparison grid, and CSV emission.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("CSV line {line}: {detail}")]
    CsvParse { line: usize, detail: String },
}

/// Monotonic time source; injectable so statistics are testable.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

/// The real clock.
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.0.elapsed()
    }
}

/// Scripted clock: pops one pre-seeded reading per call.
pub struct FakeClock {
    readings: VecDeque<Duration>,
}

impl FakeClock {
    pub fn from_millis(readings: &[u64]) -> Self {
        FakeClock {
            readings: readings.iter().map(|&ms| Duration::from_millis(ms)).collect(),
        }
    }
}

impl Clock for FakeClock {
    fn now(&mut self) -> Duration {
        self.readings
            .pop_front()
            .expect("fake clock ran out of readings")
    }
}

/// Where the benchmark input comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    Synthetic,
    ImageFile(PathBuf),
}

/// One benchmark configuration cell: a model under a fixed setup.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub model_label: String,
    pub config_label: String,
    pub threads: usize,
    pub input_size: (usize, usize),
    pub warmup: u32,
    pub iters: u32,
    pub source: InputSource,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iters < 1 {
            return Err(BenchError::InvalidConfig(
                "measured iterations must be >= 1".into(),
            ));
        }
        if self.threads < 1 {
            return Err(BenchError::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model_label: "model".into(),
            config_label: "default".into(),
            threads: 1,
            input_size: (416, 416),
            warmup: 5,
            iters: 30,
            source: InputSource::Synthetic,
        }
    }
}

/// Statistics over the measured (post-warmup) iterations of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub model: String,
    pub config: String,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub stddev_ms: f64,
    pub iters: u32,
}

/// A full grid of cells plus an operator-supplied host description.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub host: String,
    pub cells: Vec<BenchCell>,
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile on a sorted sample.
fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Runs `warmup` discarded iterations then `iters` measured ones of `run`,
/// timing each with `clock`.
pub fn time_inference(
    run: &mut dyn FnMut(),
    cfg: &BenchConfig,
    clock: &mut dyn Clock,
) -> Result<BenchCell, BenchError> {
    cfg.validate()?;
    for _ in 0..cfg.warmup {
        let _start = clock.now();
        run();
        let _end = clock.now();
    }
    let mut samples = Vec::with_capacity(cfg.iters as usize);
    for _ in 0..cfg.iters {
        let start = clock.now();
        run();
        let end = clock.now();
        samples.push(end.saturating_sub(start).as_secs_f64() * 1e3);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));

    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let stddev = if n > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(BenchCell {
        model: cfg.model_label.clone(),
        config: cfg.config_label.clone(),
        mean_ms: mean,
        median_ms: median_of_sorted(&samples),
        p95_ms: percentile_of_sorted(&samples, 0.95),
        stddev_ms: stddev,
        iters: cfg.iters,
    })
}

/// Median-latency ratio of two cells; `None` guards a zero denominator.
pub fn speedup(full: &BenchCell, tiny: &BenchCell) -> Option<f64> {
    if tiny.median_ms == 0.0 {
        None
    } else {
        Some(full.median_ms / tiny.median_ms)
    }
}

/// Text grid: rows are models, columns are configurations, cells are
/// median milliseconds.
pub fn render_table(report: &BenchReport) -> String {
    let mut configs: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for cell in &report.cells {
        if !configs.contains(&cell.config.as_str()) {
            configs.push(&cell.config);
        }
        if !models.contains(&cell.model.as_str()) {
            models.push(&cell.model);
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["model".to_string()];
    header.extend(configs.iter().map(|c| c.to_string()));
    rows.push(header);
    for model in &models {
        let mut row = vec![model.to_string()];
        for config in &configs {
            let value = report
                .cells
                .iter()
                .find(|c| c.model == *model && c.config == *config)
                .map(|c| format!("{:.1}", c.median_ms))
                .unwrap_or_else(|| "-".to_string());
            row.push(value);
        }
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    if !report.host.is_empty() {
        let _ = writeln!(out, "host: {}", report.host);
    }
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join("  "));
    }
    out
}

pub const CSV_HEADER: &str = "model,config,mean_ms,median_ms,p95_ms,stddev_ms,iters";

/// CSV emission. Floats use Rust's shortest round-trip formatting, so
/// re-parsing reproduces the cells exactly.
pub fn cells_to_csv(cells: &[BenchCell]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.model, c.config, c.mean_ms, c.median_ms, c.p95_ms, c.stddev_ms, c.iters
        );
    }
    out
}

pub fn cells_from_csv(text: &str) -> Result<Vec<BenchCell>, BenchError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(BenchError::CsvParse {
        line: 1,
        detail: "empty document".into(),
    })?;
    if header.trim() != CSV_HEADER {
        return Err(BenchError::CsvParse {
            line: 1,
            detail: format!("unexpected header `{header}`"),
        });
    }
    let mut cells = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 7 {
            return Err(BenchError::CsvParse {
                line: line_no,
                detail: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64, BenchError> {
            fields[i].parse().map_err(|_| BenchError::CsvParse {
                line: line_no,
                detail: format!("field {} is not a number: `{}`", i + 1, fields[i]),
            })
        };
        cells.push(BenchCell {
            model: fields[0].to_string(),
            config: fields[1].to_string(),
            mean_ms: num(2)?,
            median_ms: num(3)?,
            p95_ms: num(4)?,
            stddev_ms: num(5)?,
            iters: fields[6].parse().map_err(|_| BenchError::CsvParse {
                line: line_no,
                detail: format!("bad iteration count `{}`", fields[6]),
            })?,
        });
    }
    Ok(cells)
}
