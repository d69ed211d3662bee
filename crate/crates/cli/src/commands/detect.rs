//! `breathgate detect`: detections per image as one JSON document per
//! line, sharing the wire detection schema with the verification payload.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use breathgate_core::detect::{DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use breathgate_core::tensor::ExecContext;
use breathgate_core::verify::WireDetection;

use crate::engine::Model;
use crate::imaging;
use crate::EXIT_OK;

#[derive(Args)]
pub struct DetectArgs {
    /// Darknet config file.
    #[arg(long = "cfg", value_name = "PATH")]
    pub cfg: PathBuf,
    /// Darknet weights file.
    #[arg(long, value_name = "PATH")]
    pub weights: PathBuf,
    /// Class names file, one per line.
    #[arg(long, value_name = "PATH")]
    pub names: PathBuf,
    /// Confidence threshold.
    #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
    pub conf: f32,
    /// IoU threshold for non-maximum suppression.
    #[arg(long = "nms", default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub nms: f32,
    /// Write JSON lines here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Also write annotated copies (boxes burned in) into this directory.
    #[arg(long = "annotate-dir", value_name = "DIR")]
    pub annotate_dir: Option<PathBuf>,
    /// Worker threads for the convolution path.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Images to run, in order.
    #[arg(value_name = "IMAGE", required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Serialize)]
struct DetectionReport<'a> {
    v: u32,
    image: &'a str,
    detections: Vec<WireDetection>,
}

pub fn run(args: DetectArgs) -> Result<i32> {
    if !(args.conf > 0.0 && args.conf < 1.0) {
        bail!("--conf must be in (0, 1)");
    }
    let model = Model::load(&args.cfg, &args.weights, &args.names)?;
    let mut ctx = ExecContext::with_threads(args.threads)?;

    let mut sink: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    if let Some(dir) = &args.annotate_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    for path in &args.images {
        let image = imaging::load_pixel_image(path)?;
        let detections = model.detect(&mut ctx, &image, args.conf, args.nms)?;
        let report = DetectionReport {
            v: 1,
            image: &path.to_string_lossy(),
            detections: detections.iter().map(WireDetection::from).collect(),
        };
        writeln!(sink, "{}", serde_json::to_string(&report)?)?;

        if let Some(dir) = &args.annotate_dir {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            let annotated = imaging::annotate(&image, &detections);
            imaging::save_image(&annotated, &dir.join(format!("{stem}_det.png")))?;
        }
    }
    Ok(EXIT_OK)
}
