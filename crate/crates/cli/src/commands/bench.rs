//! `breathgate bench`: timed inference across model/thread configurations
//! with warmup exclusion, a rendered grid, optional CSV, and the full/tiny
//! speedup line when exactly two models run.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;

use breathgate_core::bench::{
    cells_to_csv, render_table, speedup, time_inference, BenchCell, BenchConfig, BenchReport,
    InputSource, MonotonicClock,
};
use breathgate_core::detect::PixelImage;
use breathgate_core::detect::letterbox;
use breathgate_core::tensor::{ExecContext, Tensor};

use crate::engine::Model;
use crate::imaging;
use crate::EXIT_OK;

/// `label=config.cfg[:weights.weights]`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub label: String,
    pub cfg: PathBuf,
    pub weights: Option<PathBuf>,
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, rest) = s
            .split_once('=')
            .ok_or_else(|| format!("`{s}` is not label=cfg[:weights]"))?;
        let (cfg, weights) = match rest.split_once(':') {
            Some((c, w)) => (c, Some(PathBuf::from(w))),
            None => (rest, None),
        };
        Ok(ModelSpec {
            label: label.to_string(),
            cfg: PathBuf::from(cfg),
            weights,
        })
    }
}

#[derive(Args)]
pub struct BenchArgs {
    /// Model under test as label=cfg[:weights]; repeatable. Without a
    /// weights file, seeded random weights are used.
    #[arg(long = "model", value_name = "SPEC", required = true)]
    pub models: Vec<ModelSpec>,
    /// Square input resolution.
    #[arg(long, default_value_t = 416)]
    pub size: usize,
    /// Comma-separated thread counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    pub threads: Vec<usize>,
    /// Discarded warmup iterations per cell.
    #[arg(long, default_value_t = 5)]
    pub warmup: u32,
    /// Measured iterations per cell.
    #[arg(long, default_value_t = 30)]
    pub iters: u32,
    /// Seed for random weights when no weights file is given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this image (letterboxed) instead of a synthetic input.
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,
    /// Free-text host descriptor recorded with the report.
    #[arg(long, default_value = "")]
    pub host: String,
    /// Also write the cells as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

fn bench_input(args: &BenchArgs, size: usize) -> Result<Tensor> {
    match &args.image {
        Some(path) => {
            let image: PixelImage = imaging::load_pixel_image(path)?;
            Ok(letterbox(&image, size, size).0)
        }
        None => Ok(Tensor::filled(3, size, size, 0.5)),
    }
}

pub fn run(args: BenchArgs) -> Result<i32> {
    if args.iters < 1 {
        bail!("--iters must be >= 1");
    }
    let input = bench_input(&args, args.size)?;
    let source = match &args.image {
        Some(p) => InputSource::ImageFile(p.clone()),
        None => InputSource::Synthetic,
    };

    let mut cells: Vec<BenchCell> = Vec::new();
    for spec in &args.models {
        let model = Model::load_for_bench(&spec.cfg, spec.weights.as_deref(), args.size, args.seed)?;

        for &threads in &args.threads {
            let cfg = BenchConfig {
                model_label: spec.label.clone(),
                config_label: format!("{threads}t@{}", args.size),
                threads,
                input_size: (args.size, args.size),
                warmup: args.warmup,
                iters: args.iters,
                source: source.clone(),
            };
            let mut ctx = ExecContext::with_threads(threads)?;
            let mut clock = MonotonicClock::new();
            let mut run_once = || {
                model
                    .forward_tensor(&mut ctx, &input)
                    .expect("benchmark forward");
            };
            let cell = time_inference(&mut run_once, &cfg, &mut clock)?;
            eprintln!(
                "{} {}: median {:.1} ms (mean {:.1}, p95 {:.1}, n={})",
                cell.model, cell.config, cell.median_ms, cell.mean_ms, cell.p95_ms, cell.iters
            );
            cells.push(cell);
        }
    }

    let report = BenchReport {
        host: args.host.clone(),
        cells,
    };
    print!("{}", render_table(&report));

    if args.models.len() == 2 {
        let (a, b) = (&args.models[0].label, &args.models[1].label);
        for &threads in &args.threads {
            let config = format!("{threads}t@{}", args.size);
            let find = |label: &str| {
                report
                    .cells
                    .iter()
                    .find(|c| c.model == label && c.config == config)
            };
            if let (Some(full), Some(tiny)) = (find(a), find(b)) {
                if let Some(ratio) = speedup(full, tiny) {
                    println!("speedup {config} ({a}/{b}): {ratio:.2}x");
                }
            }
        }
    }

    if let Some(path) = &args.csv {
        fs::write(path, cells_to_csv(&report.cells))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EXIT_OK)
}
