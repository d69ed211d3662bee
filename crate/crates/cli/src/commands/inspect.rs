//! `breathgate inspect`: layer table, parameter count, and weights-size
//! accounting for a config, optionally checked against an actual file.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use breathgate_core::cfg::{self};
use breathgate_core::weights::{expected_size, read_weights, WeightsHeader};

use crate::engine::load_config;
use crate::{EXIT_OK, EXIT_REJECTED};

#[derive(Args)]
pub struct InspectArgs {
    /// Darknet config file.
    #[arg(long = "cfg", value_name = "PATH")]
    pub cfg: PathBuf,
    /// Weights file to verify against the config.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

pub fn run(args: InspectArgs) -> Result<i32> {
    let config = load_config(&args.cfg)?;
    let shapes = cfg::compute_output_shapes(&config)?;
    let input = config.input_shape()?;

    println!("input: {input}");
    println!("{:>5}  {:<14} {}", "index", "kind", "output");
    for (i, layer) in config.layers.iter().enumerate() {
        println!("{:>5}  {:<14} {}", i, layer.kind.to_string(), shapes[i]);
    }

    let params = cfg::count_parameters(&config)?;
    let header = WeightsHeader::default();
    let expected = expected_size(&config, &header)?;
    println!("layers: {}", config.layers.len());
    println!("parameters: {params}");
    println!(
        "expected weights bytes: {expected} ({:.1} MB)",
        expected as f64 / 1e6
    );

    let Some(weights_path) = &args.weights else {
        return Ok(EXIT_OK);
    };
    let actual = fs::metadata(weights_path)
        .with_context(|| format!("reading metadata of {}", weights_path.display()))?
        .len();
    println!("weights file bytes: {actual}");

    let file = fs::File::open(weights_path)
        .with_context(|| format!("opening {}", weights_path.display()))?;
    match read_weights(std::io::BufReader::new(file), &config) {
        Ok(model) => {
            println!(
                "weights: match (version {}.{}.{}, {} conv layers, zero trailing bytes)",
                model.header.major,
                model.header.minor,
                model.header.revision,
                model.layers.len()
            );
            Ok(EXIT_OK)
        }
        Err(err) => {
            println!("weights: mismatch ({err})");
            Ok(EXIT_REJECTED)
        }
    }
}
