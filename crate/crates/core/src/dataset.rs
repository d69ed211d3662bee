//! Dataset preparation: Pascal/VOC annotation ingestion (the LabelImg
//! dialect), YOLO-format label emission, deterministic train/test
//! splitting, and Darknet manifest generation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed XML at line {line}: {detail}")]
    MalformedXml { line: usize, detail: String },
    #[error("annotation has no usable <size> element")]
    MissingSize,
    #[error("object at line {line} has an empty <name>")]
    EmptyObjectName { line: usize },
    #[error("object `{name}`: box ({xmin},{ymin})-({xmax},{ymax}) is degenerate")]
    InvalidBox {
        name: String,
        xmin: f32,
        ymin: f32,
        xmax: f32,
        ymax: f32,
    },
    #[error("class `{name}` is not in the names list")]
    UnknownClass { name: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("malformed label line `{line}`")]
    MalformedLabel { line: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One object within a VOC annotation, pixel corner coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub name: String,
    pub xmin: f32,
    pub ymin: f32,
    pub xmax: f32,
    pub ymax: f32,
    pub difficult: bool,
    pub truncated: bool,
}

/// A parsed VOC annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub filename: Option<String>,
    pub objects: Vec<VocObject>,
}

/// One line of a Darknet label file: class index plus a normalized
/// center-format box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLabel {
    pub class_id: usize,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

fn xml_error(e: roxmltree::Error) -> DatasetError {
    DatasetError::MalformedXml {
        line: e.pos().row as usize,
        detail: e.to_string(),
    }
}

fn child_text<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
}

fn parse_coord(node: roxmltree::Node, name: &str) -> Result<f32, DatasetError> {
    let text = child_text(node, name).ok_or_else(|| DatasetError::MalformedXml {
        line: node_line(node),
        detail: format!("bndbox is missing <{name}>"),
    })?;
    text.parse::<f32>().map_err(|_| DatasetError::MalformedXml {
        line: node_line(node),
        detail: format!("<{name}> is not a number: `{text}`"),
    })
}

fn node_line(node: roxmltree::Node) -> usize {
    let doc = node.document();
    doc.text_pos_at(node.range().start).row as usize
}

/// Parses a LabelImg-dialect VOC annotation. Unknown elements are ignored;
/// `difficult`/`truncated` flags are preserved.
pub fn parse_voc(xml: &str) -> Result<VocAnnotation, DatasetError> {
    let doc = roxmltree::Document::parse(xml).map_err(xml_error)?;
    let root = doc.root_element();

    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or(DatasetError::MissingSize)?;
    let dim = |name: &str| -> Result<u32, DatasetError> {
        child_text(size, name)
            .and_then(|t| t.parse::<u32>().ok())
            .filter(|&v| v > 0)
            .ok_or(DatasetError::MissingSize)
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let depth = child_text(size, "depth")
        .and_then(|t| t.parse::<u32>().ok())
        .unwrap_or(3);

    let filename = child_text(root, "filename").map(str::to_string);

    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = child_text(obj, "name")
            .ok_or(DatasetError::EmptyObjectName {
                line: node_line(obj),
            })?
            .to_string();
        if name.is_empty() {
            return Err(DatasetError::EmptyObjectName {
                line: node_line(obj),
            });
        }
        let bndbox = obj
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| DatasetError::MalformedXml {
                line: node_line(obj),
                detail: format!("object `{name}` has no <bndbox>"),
            })?;
        let xmin = parse_coord(bndbox, "xmin")?;
        let ymin = parse_coord(bndbox, "ymin")?;
        let xmax = parse_coord(bndbox, "xmax")?;
        let ymax = parse_coord(bndbox, "ymax")?;
        if xmax <= xmin || ymax <= ymin {
            return Err(DatasetError::InvalidBox {
                name,
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        let flag = |key: &str| child_text(obj, key).map(|t| t == "1").unwrap_or(false);
        objects.push(VocObject {
            name,
            xmin,
            ymin,
            xmax,
            ymax,
            difficult: flag("difficult"),
            truncated: flag("truncated"),
        });
    }

    Ok(VocAnnotation {
        width,
        height,
        depth,
        filename,
        objects,
    })
}

/// Converts pixel corner boxes to normalized center-format YOLO labels.
/// Every object class must appear in `names`.
pub fn voc_to_yolo(ann: &VocAnnotation, names: &[String]) -> Result<Vec<YoloLabel>, DatasetError> {
    let w = ann.width as f32;
    let h = ann.height as f32;
    ann.objects
        .iter()
        .map(|obj| {
            let class_id = names
                .iter()
                .position(|n| *n == obj.name)
                .ok_or_else(|| DatasetError::UnknownClass {
                    name: obj.name.clone(),
                })?;
            Ok(YoloLabel {
                class_id,
                cx: (obj.xmin + obj.xmax) / 2.0 / w,
                cy: (obj.ymin + obj.ymax) / 2.0 / h,
                w: (obj.xmax - obj.xmin) / w,
                h: (obj.ymax - obj.ymin) / h,
            })
        })
        .collect()
}

/// The 6-decimal fixed format used by the wider Darknet tooling; keeps
/// emitted label files byte-stable.
pub fn format_label(label: &YoloLabel) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        label.class_id, label.cx, label.cy, label.w, label.h
    )
}

pub fn parse_label_line(line: &str) -> Result<YoloLabel, DatasetError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let err = || DatasetError::MalformedLabel {
        line: line.to_string(),
    };
    if fields.len() != 5 {
        return Err(err());
    }
    Ok(YoloLabel {
        class_id: fields[0].parse().map_err(|_| err())?,
        cx: fields[1].parse().map_err(|_| err())?,
        cy: fields[2].parse().map_err(|_| err())?,
        w: fields[3].parse().map_err(|_| err())?,
        h: fields[4].parse().map_err(|_| err())?,
    })
}

pub fn parse_label_file(text: &str) -> Result<Vec<YoloLabel>, DatasetError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_label_line)
        .collect()
}

/// Deterministic train/test partition: a seeded shuffle, then the first
/// `round(fraction * n)` items become the training set. The same inputs
/// always produce the same split.
pub fn split_dataset(
    items: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let mut shuffled: Vec<String> = items.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let train_n = (train_fraction * items.len() as f64).round() as usize;
    let test = shuffled.split_off(train_n.min(items.len()));
    Ok((shuffled, test))
}

/// One image with its labels, ready for manifest emission.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub image_path: String,
    pub labels: Vec<YoloLabel>,
}

/// Paths produced by [`write_manifests`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestPaths {
    pub train_list: PathBuf,
    pub test_list: PathBuf,
    pub names_file: PathBuf,
    pub data_file: PathBuf,
    pub label_dir: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

/// Emits the Darknet-convention file set: `train.txt`/`test.txt` image
/// lists, `obj.names`, `obj.data`, and one label file per image (same
/// basename, under `labels/`). Re-running with identical inputs produces
/// byte-identical files.
pub fn write_manifests(
    train: &[DatasetItem],
    test: &[DatasetItem],
    names: &[String],
    output_dir: &Path,
) -> Result<ManifestPaths, DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io {
            path: path.clone(),
            source,
        }
    };
    fs::create_dir_all(output_dir).map_err(io(output_dir))?;
    let label_dir = output_dir.join("labels");
    fs::create_dir_all(&label_dir).map_err(io(&label_dir))?;

    let list = |items: &[DatasetItem]| {
        let mut out = String::new();
        for item in items {
            out.push_str(&item.image_path);
            out.push('\n');
        }
        out
    };
    let train_list = output_dir.join("train.txt");
    let test_list = output_dir.join("test.txt");
    write_file(&train_list, &list(train))?;
    write_file(&test_list, &list(test))?;

    let names_file = output_dir.join("obj.names");
    let mut names_text = String::new();
    for n in names {
        names_text.push_str(n);
        names_text.push('\n');
    }
    write_file(&names_file, &names_text)?;

    let data_file = output_dir.join("obj.data");
    let data_text = format!(
        "classes = {}\ntrain = {}\nvalid = {}\nnames = {}\nbackup = {}\n",
        names.len(),
        train_list.display(),
        test_list.display(),
        names_file.display(),
        output_dir.join("backup").display(),
    );
    write_file(&data_file, &data_text)?;

    for item in train.iter().chain(test) {
        let stem = Path::new(&item.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| item.image_path.clone());
        let mut text = String::new();
        for label in &item.labels {
            text.push_str(&format_label(label));
            text.push('\n');
        }
        write_file(&label_dir.join(format!("{stem}.txt")), &text)?;
    }

    Ok(ManifestPaths {
        train_list,
        test_list,
        names_file,
        data_file,
        label_dir,
    })
}
