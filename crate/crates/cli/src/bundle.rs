use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ucl_core::graphs::{build_view_graph, MessageRecord, SplitDataset, Splits, View, ViewGraph};
use ucl_core::harness::{Model, TrainConfig};
use ucl_core::numkit::Matrix;

use crate::jsonl::{load_jsonl, write_jsonl};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const GRAPHS_FILE: &str = "graphs.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub classes: usize,
    #[serde(flatten)]
    pub splits: Splits,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

pub fn write_bundle(dir: &Path, records: &[MessageRecord], dataset: &SplitDataset) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_jsonl(&dir.join(RECORDS_FILE), records)?;
    write_json(
        &dir.join(SPLIT_FILE),
        &SplitFile {
            classes: dataset.classes,
            splits: dataset.splits.clone(),
        },
    )?;
    write_json(&dir.join(GRAPHS_FILE), &dataset.graphs)
}

/// Loads a bundle. The graph cache is used when present and consistent
/// with the records; otherwise graphs are rebuilt from the records.
pub fn read_bundle(dir: &Path) -> Result<SplitDataset> {
    if !dir.is_dir() {
        bail!("dataset bundle {} is not a directory", dir.display());
    }
    let records = load_jsonl(&dir.join(RECORDS_FILE))?;
    if records.is_empty() {
        bail!("{} holds no records", dir.join(RECORDS_FILE).display());
    }
    let split: SplitFile = read_json(&dir.join(SPLIT_FILE))?;
    let cache = dir.join(GRAPHS_FILE);
    let graphs = if cache.exists() {
        let graphs: Vec<ViewGraph> = read_json(&cache)?;
        let stamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
        let fits = graphs.len() == View::ALL.len()
            && graphs.iter().zip(View::ALL).all(|(g, v)| g.view == v && g.timestamps() == stamps.as_slice());
        if !fits {
            bail!("{} does not match {}; delete it to rebuild", cache.display(), RECORDS_FILE);
        }
        graphs
    } else {
        View::ALL.iter().map(|&v| build_view_graph(&records, v)).collect()
    };
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
    let dataset = SplitDataset {
        classes: split.classes,
        ids: records.iter().map(|r| r.id).collect(),
        graphs,
        features: Matrix::from_rows(&rows)?,
        labels: records.iter().map(|r| r.label).collect(),
        splits: split.splits,
    };
    dataset.validate().with_context(|| format!("invalid bundle {}", dir.display()))?;
    Ok(dataset)
}

/// Trained model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Epoch the parameters were taken from.
    pub epoch: usize,
    pub model: Model,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(path, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = read_json(path)?;
    c.model.validate().with_context(|| format!("invalid checkpoint {}", path.display()))?;
    Ok(c)
}
