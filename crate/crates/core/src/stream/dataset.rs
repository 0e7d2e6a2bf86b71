use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledVector, TEST_ID_FLAG};
use crate::{ClassId, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// Train and test samples of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSamples {
    pub id: ClassId,
    pub name: String,
    pub train: Vec<LabeledVector>,
    pub test: Vec<LabeledVector>,
}

/// A feature-vector dataset whose classes are indexed `0..N`.
///
/// On disk a dataset is a directory:
///
/// ```text
/// manifest.json      {"version":1,"feature_dim":D,"classes":[{"id","name","train","test"}]}
/// train/<id>.csv     one sample per line, D comma-separated floats
/// test/<id>.csv
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub classes: Vec<ClassSamples>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    feature_dim: usize,
    classes: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: ClassId,
    name: String,
    train: usize,
    test: usize,
}

/// Raw features of one class: `(name, train rows, test rows)`.
pub type RawClass = (String, Vec<Vec<f64>>, Vec<Vec<f64>>);

impl Dataset {
    /// Assembles a dataset from raw per-class features, assigning stable
    /// sample ids in class order.
    pub fn from_features(
        feature_dim: usize,
        classes: Vec<RawClass>,
    ) -> Result<Self> {
        let mut next_train = 0u64;
        let mut next_test = TEST_ID_FLAG;
        let mut out = Vec::with_capacity(classes.len());
        for (c, (name, train, test)) in classes.into_iter().enumerate() {
            let label = c as ClassId;
            let wrap = |rows: Vec<Vec<f64>>, next: &mut u64| -> Result<Vec<LabeledVector>> {
                rows.into_iter()
                    .map(|features| {
                        if features.len() != feature_dim {
                            return Err(Error::DimensionMismatch {
                                expected: feature_dim,
                                got: features.len(),
                            });
                        }
                        let v = LabeledVector::new(*next, features, label);
                        *next += 1;
                        Ok(v)
                    })
                    .collect()
            };
            let train = wrap(train, &mut next_train)?;
            let test = wrap(test, &mut next_test)?;
            out.push(ClassSamples {
                id: label,
                name,
                train,
                test,
            });
        }
        Ok(Dataset {
            feature_dim,
            classes: out,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn train_counts(&self) -> Vec<u64> {
        self.classes.iter().map(|c| c.train.len() as u64).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let mut classes = Vec::with_capacity(manifest.classes.len());
        for (pos, entry) in manifest.classes.iter().enumerate() {
            if entry.id as usize != pos {
                return Err(Error::Data(format!(
                    "manifest class ids must be 0..N in order, found {} at {pos}",
                    entry.id
                )));
            }
            let train = read_rows(&dir.join("train").join(format!("{}.csv", entry.id)))?;
            let test = read_rows(&dir.join("test").join(format!("{}.csv", entry.id)))?;
            if train.len() != entry.train || test.len() != entry.test {
                return Err(Error::Data(format!(
                    "class {}: manifest lists {}/{} samples, files hold {}/{}",
                    entry.id,
                    entry.train,
                    entry.test,
                    train.len(),
                    test.len()
                )));
            }
            classes.push((entry.name.clone(), train, test));
        }
        Dataset::from_features(manifest.feature_dim, classes)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for split in ["train", "test"] {
            let d = dir.join(split);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            feature_dim: self.feature_dim,
            classes: self
                .classes
                .iter()
                .map(|c| ManifestEntry {
                    id: c.id,
                    name: c.name.clone(),
                    train: c.train.len(),
                    test: c.test.len(),
                })
                .collect(),
        };
        for c in &self.classes {
            write_rows(&dir.join("train").join(format!("{}.csv", c.id)), &c.train)?;
            write_rows(&dir.join("test").join(format!("{}.csv", c.id)), &c.test)?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[LabeledVector]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line: Vec<String> = row.features.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
