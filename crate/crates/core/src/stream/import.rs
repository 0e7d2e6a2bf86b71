//! Image-folder importer.
//!
//! Expects `<root>/<class_name>/<image>` with PNG or JPEG files. Classes get
//! ids in ascending byte order of their directory names; files within a class
//! are sorted by name and the last `test_per_class` of them form the test
//! split.
//!
//! The featurizer is fixed so imports are reproducible bit for bit:
//!
//! 1. decode and convert to 8-bit RGB;
//! 2. resize to `side x side` with a triangle (bilinear) filter;
//! 3. scale each channel value to `v / 255`;
//! 4. standardize each channel over the image's pixels with its mean and
//!    population standard deviation (a deviation below `1e-8` is replaced
//!    by 1);
//! 5. flatten row-major with interleaved channels (`R, G, B` per pixel),
//!    giving `3 * side * side` features.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;

use super::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ImportOptions {
    pub side: u32,
    pub test_per_class: usize,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            side: 8,
            test_per_class: 20,
        }
    }
}

pub fn featurize(img: &RgbImage, side: u32) -> Vec<f64> {
    let small = imageops::resize(img, side, side, FilterType::Triangle);
    let pixels = (side * side) as usize;
    let mut out: Vec<f64> = small.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    for ch in 0..3 {
        let values = || out.iter().skip(ch).step_by(3);
        let mean = values().sum::<f64>() / pixels as f64;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / pixels as f64;
        let std = var.sqrt();
        let std = if std < 1e-8 { 1.0 } else { std };
        for v in out.iter_mut().skip(ch).step_by(3) {
            *v = (*v - mean) / std;
        }
    }
    out
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() == want_dirs)
        .collect();
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Converts an image folder into a feature dataset and writes it to `out`.
pub fn import_image_folder(root: &Path, out: &Path, opts: &ImportOptions) -> Result<Dataset> {
    if opts.side == 0 {
        return Err(Error::Config("featurizer side must be positive".into()));
    }
    let mut classes = Vec::new();
    for class_dir in sorted_entries(root, true)? {
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let files: Vec<PathBuf> = sorted_entries(&class_dir, false)?
            .into_iter()
            .filter(|p| is_image(p))
            .collect();
        if files.len() <= opts.test_per_class {
            return Err(Error::Data(format!(
                "class {name} has {} images, need more than {} for the test split",
                files.len(),
                opts.test_per_class
            )));
        }
        let mut rows = Vec::with_capacity(files.len());
        for path in &files {
            let img = image::open(path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            rows.push(featurize(&img, opts.side));
        }
        let test = rows.split_off(rows.len() - opts.test_per_class);
        classes.push((name, rows, test));
    }
    if classes.is_empty() {
        return Err(Error::Data(format!(
            "no class folders under {}",
            root.display()
        )));
    }
    let dim = 3 * (opts.side * opts.side) as usize;
    let dataset = Dataset::from_features(dim, classes)?;
    dataset.save(out)?;
    Ok(dataset)
}
