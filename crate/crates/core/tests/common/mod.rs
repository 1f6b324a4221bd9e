#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use fedsim::data::{Dataset, Split, IMAGES_MAGIC, LABELS_MAGIC};

pub const SIDE: usize = 8;

fn idx_images(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for word in [IMAGES_MAGIC, ds.len() as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        ds.images()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

fn idx_labels(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for word in [LABELS_MAGIC, ds.len() as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(ds.labels());
    out
}

/// Writes a small 8x8 synthetic dataset under the standard IDX names.
pub fn write_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let train = Dataset::synthetic(1500, SIDE * SIDE, 0.15, 11, Split::Train);
    let test = Dataset::synthetic(120, SIDE * SIDE, 0.15, 12, Split::Test);
    fs::write(data.join("train-images-idx3-ubyte"), idx_images(&train)).unwrap();
    fs::write(data.join("train-labels-idx1-ubyte"), idx_labels(&train)).unwrap();
    fs::write(data.join("t10k-images-idx3-ubyte"), idx_images(&test)).unwrap();
    fs::write(data.join("t10k-labels-idx1-ubyte"), idx_labels(&test)).unwrap();
    data
}

/// Config for the synthetic dataset: small network, short run.
pub fn write_config(dir: &Path, rounds: usize) -> PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
  "rounds": {rounds},
  "model": {{ "layer_sizes": [{}, 16], "output_size": 10 }},
  "eval_subset_size": 500
}}"#,
        SIDE * SIDE
    );
    fs::write(&path, text).unwrap();
    path
}
