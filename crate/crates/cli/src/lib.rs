//! The `breathgate` command line: detection, model inspection,
//! benchmarking, dataset preparation, and the verification pipeline.
//!
//! Exit codes: 0 on success, 1 on a domain rejection (verification
//! rejected or timed out, inspect mismatch), 2 on usage or I/O errors.

pub mod commands;
pub mod engine;
pub mod imaging;

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "breathgate",
    version,
    about = "CPU YOLOv3 runtime and detection-gated sample verification toolchain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run object detection over images and emit structured detections.
    Detect(commands::detect::DetectArgs),
    /// Print a layer table, parameter count, and weights-size accounting.
    Inspect(commands::inspect::InspectArgs),
    /// Time inference across models and thread counts, Table-style.
    Bench(commands::bench::BenchArgs),
    /// Convert Pascal/VOC annotations to YOLO label files.
    Convert(commands::dataset::ConvertArgs),
    /// Deterministically split an image list and emit Darknet manifests.
    Split(commands::dataset::SplitArgs),
    /// Run the full co-presence verification pipeline over frames.
    Verify(commands::verify::VerifyArgs),
}

/// Parses arguments and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(args) => commands::detect::run(args),
        Command::Inspect(args) => commands::inspect::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Convert(args) => commands::dataset::run_convert(args),
        Command::Split(args) => commands::dataset::run_split(args),
        Command::Verify(args) => commands::verify::run(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_USAGE
        }
    }
}
