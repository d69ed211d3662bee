//! Structural checks of the reference configs shipped under `models/`
//! against independently counted layer and parameter totals.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use breathgate_core::cfg::{self, Shape};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> cfg::NetworkConfig {
    let text = fs::read_to_string(models_dir().join(name)).expect("read reference config");
    let parsed = cfg::parse_config(&text).expect("parse reference config");
    assert!(
        parsed.warnings.is_empty(),
        "reference config {name} should parse without warnings: {:?}",
        parsed.warnings
    );
    parsed.config
}

fn census(config: &cfg::NetworkConfig) -> BTreeMap<&'static str, usize> {
    let mut by_name = BTreeMap::new();
    for layer in &config.layers {
        *by_name.entry(layer.kind.section_name()).or_insert(0) += 1;
    }
    by_name
}

#[test]
fn tiny_config_layer_census() {
    let config = load("yolov3-tiny.cfg");
    assert_eq!(config.layers.len(), 24);
    let by_name = census(&config);
    assert_eq!(by_name["convolutional"], 13);
    assert_eq!(by_name["maxpool"], 6);
    assert_eq!(by_name["route"], 2);
    assert_eq!(by_name["upsample"], 1);
    assert_eq!(by_name["yolo"], 2);
}

#[test]
fn full_config_layer_census() {
    let config = load("yolov3.cfg");
    assert_eq!(config.layers.len(), 107);
    let by_name = census(&config);
    assert_eq!(by_name["convolutional"], 75);
    assert_eq!(by_name["shortcut"], 23);
    assert_eq!(by_name["route"], 4);
    assert_eq!(by_name["upsample"], 2);
    assert_eq!(by_name["yolo"], 3);
}

#[test]
fn tiny_heads_receive_13_and_26_grids() {
    let config = load("yolov3-tiny.cfg");
    let shapes = cfg::compute_output_shapes(&config).unwrap();
    let heads = config.yolo_heads().unwrap();
    assert_eq!(heads.len(), 2);
    assert_eq!(shapes[heads[0].layer_index], Shape::new(255, 13, 13));
    assert_eq!(shapes[heads[1].layer_index], Shape::new(255, 26, 26));
}

#[test]
fn full_heads_receive_13_26_52_grids() {
    let config = load("yolov3.cfg");
    let shapes = cfg::compute_output_shapes(&config).unwrap();
    let heads = config.yolo_heads().unwrap();
    assert_eq!(heads.len(), 3);
    let grids: Vec<usize> = heads.iter().map(|h| shapes[h.layer_index].h).collect();
    assert_eq!(grids, vec![13, 26, 52]);
    for head in &heads {
        assert_eq!(shapes[head.layer_index].c, 255);
    }
}

#[test]
fn parameter_totals_match_published_weight_files() {
    // Byte lengths of the published .weights artifacts: 20-byte header
    // plus four bytes per stored value.
    let tiny = load("yolov3-tiny.cfg");
    assert_eq!(cfg::count_parameters(&tiny).unwrap(), 8_858_734);

    let full = load("yolov3.cfg");
    assert_eq!(cfg::count_parameters(&full).unwrap(), 62_001_757);
}

#[test]
fn reference_configs_round_trip() {
    for name in ["yolov3-tiny.cfg", "yolov3.cfg"] {
        let config = load(name);
        let reparsed = cfg::parse_config(&cfg::serialize_config(&config))
            .expect("serialized config reparses")
            .config;
        assert_eq!(reparsed, config, "{name} round-trip");
    }
}

#[test]
fn tiny_freeze_all_but_last_three() {
    let config = load("yolov3-tiny.cfg");
    let frozen = cfg::apply_freeze(&config, config.layers.len() - 3).unwrap();
    for (i, layer) in frozen.layers.iter().enumerate() {
        let expected = if i == 20 { Some("1") } else { None };
        assert_eq!(layer.get("stopbackward"), expected, "layer {i}");
    }
}
