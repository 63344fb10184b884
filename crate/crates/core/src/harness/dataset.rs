//! A labeled bag collection and its on-disk directory form:
//! `instances.bin` (all instances stacked, feature-matrix binary format),
//! `bags.csv` (`bag,label,start,count`) and `dataset.json` (summary plus
//! optional generator description).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SCHEMA_VERSION;
use crate::error::{invalid, Error, Result};
use crate::io::{read_bin, write_atomic, write_bin};
use crate::mil::Bag;
use crate::numerics::Matrix;

pub const DATASET_INSTANCES: &str = "instances.bin";
pub const DATASET_BAGS: &str = "bags.csv";
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, classes: usize) -> Result<Self> {
        if bags.is_empty() {
            return invalid("dataset has no bags");
        }
        if classes < 2 {
            return invalid(format!("need at least 2 classes, got {classes}"));
        }
        let dim = bags[0].instances.cols();
        for (i, b) in bags.iter().enumerate() {
            if b.is_empty() {
                return invalid(format!("bag {i} has no instances"));
            }
            if b.instances.cols() != dim {
                return invalid(format!("bag {i} has {} features, bag 0 has {dim}", b.instances.cols()));
            }
            if b.label >= classes {
                return invalid(format!("bag {i} has label {} but there are {classes} classes", b.label));
            }
        }
        Ok(Self { bags, classes })
    }

    pub fn input_dim(&self) -> usize {
        self.bags[0].instances.cols()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Bag indices grouped by label.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, b) in self.bags.iter().enumerate() {
            out[b.label].push(i);
        }
        out
    }

    /// Instances of the selected bags stacked in order.
    pub fn pooled_instances(&self, bags: &[usize]) -> Result<Matrix> {
        let d = self.input_dim();
        let mut data = Vec::new();
        for &i in bags {
            let b = self.bags.get(i).ok_or_else(|| Error::Validation(format!("bag index {i} out of range")))?;
            data.extend_from_slice(b.instances.as_slice());
        }
        Matrix::new(data.len() / d, d, data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    classes: usize,
    bags: usize,
    instances: usize,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<serde_json::Value>,
}

/// Write the dataset directory; `generator` is stored verbatim in the manifest.
pub fn save_dataset(ds: &Dataset, generator: Option<serde_json::Value>, dir: &Path) -> Result<()> {
    let all: Vec<usize> = (0..ds.bags.len()).collect();
    let mut bin = Vec::new();
    write_bin(&ds.pooled_instances(&all)?, &mut bin)?;
    let mut csv = String::from("bag,label,start,count\n");
    let mut start = 0;
    for (i, b) in ds.bags.iter().enumerate() {
        csv.push_str(&format!("{i},{},{start},{}\n", b.label, b.len()));
        start += b.len();
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        classes: ds.classes,
        bags: ds.bags.len(),
        instances: start,
        dim: ds.input_dim(),
        generator,
    };
    write_atomic(&dir.join(DATASET_INSTANCES), &bin)?;
    write_atomic(&dir.join(DATASET_BAGS), csv.as_bytes())?;
    write_atomic(&dir.join(DATASET_MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(DATASET_MANIFEST))?)?;
    let source = dir.join(DATASET_INSTANCES).display().to_string();
    let all = read_bin(fs::read(dir.join(DATASET_INSTANCES))?.as_slice(), &source)?;
    if all.rows() != manifest.instances || all.cols() != manifest.dim {
        return invalid(format!(
            "{source} holds {}x{} but the manifest says {}x{}",
            all.rows(),
            all.cols(),
            manifest.instances,
            manifest.dim
        ));
    }
    let csv_path = dir.join(DATASET_BAGS).display().to_string();
    let text = fs::read_to_string(dir.join(DATASET_BAGS))?;
    let mut bags = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{csv_path}:{}", lineno + 1);
        let fields: Vec<usize> = line
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { location: location.clone(), message: e.to_string() })?;
        let [id, label, start, count] = fields[..] else {
            return Err(Error::Parse { location, message: format!("expected 4 fields, found {}", fields.len()) });
        };
        if id != bags.len() || count == 0 || start + count > all.rows() {
            return Err(Error::Parse { location, message: "bag id out of order or row range out of bounds".into() });
        }
        let rows: Vec<usize> = (start..start + count).collect();
        bags.push(Bag::new(all.select_rows(&rows)?, label));
    }
    if bags.len() != manifest.bags {
        return invalid(format!("{csv_path} lists {} bags, the manifest says {}", bags.len(), manifest.bags));
    }
    Dataset::new(bags, manifest.classes)
}
