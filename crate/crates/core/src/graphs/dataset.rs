use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_view_graph, MessageRecord, View, ViewGraph};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Train/validation/test node indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `val_per_class` then `test_per_class` nodes of every class into the
/// balanced evaluation splits; the remainder is training data.
pub fn balanced_split(
    labels: &[usize],
    classes: usize,
    val_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < val_per_class + test_per_class + 1 {
            return Err(Error::Infeasible(format!(
                "class {c} has {} messages, needs {} for evaluation plus one for training",
                members.len(),
                val_per_class + test_per_class
            )));
        }
        members.shuffle(&mut rng);
        splits.val.extend_from_slice(&members[..val_per_class]);
        splits.test.extend_from_slice(&members[val_per_class..val_per_class + test_per_class]);
        splits.train.extend_from_slice(&members[val_per_class + test_per_class..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Multi-view graphs, node features, labels and split indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub classes: usize,
    pub ids: Vec<u64>,
    pub graphs: Vec<ViewGraph>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub splits: Splits,
}

impl SplitDataset {
    /// Builds the three view graphs and validates labels and splits.
    pub fn from_records(records: &[MessageRecord], classes: usize, splits: Splits) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptySplit);
        }
        let rows: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
        let features = Matrix::from_rows(&rows)?;
        let graphs = View::ALL.iter().map(|&v| build_view_graph(records, v)).collect();
        let ds = Self {
            classes,
            ids: records.iter().map(|r| r.id).collect(),
            graphs,
            features,
            labels: records.iter().map(|r| r.label).collect(),
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.rows() != n || self.ids.len() != n {
            return Err(Error::Shape {
                op: "dataset",
                detail: format!("{n} labels, {} feature rows", self.features.rows()),
            });
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if self.classes < 1 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        if self.graphs.len() != View::ALL.len()
            || self.graphs.iter().zip(View::ALL).any(|(g, v)| g.view != v || g.node_count() != n)
        {
            return Err(Error::Shape {
                op: "dataset",
                detail: "expected co-hashtag, co-entity and co-user graphs over all nodes".into(),
            });
        }
        for g in &self.graphs {
            g.validate()?;
        }
        let mut seen = BTreeSet::new();
        for &i in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if i >= n || !seen.insert(i) {
                return Err(Error::Config(format!("split index {i} out of range or repeated")));
            }
        }
        let counts = self.class_counts(&self.splits.train);
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::EmptyClass(c));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn graph(&self, view: View) -> &ViewGraph {
        &self.graphs[view as usize]
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}
