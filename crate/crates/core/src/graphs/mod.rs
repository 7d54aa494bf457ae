//! Per-view message graphs built from shared message attributes.

mod dataset;
mod synthetic;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::TemporalNeighborhood;

pub use dataset::{balanced_split, SplitDataset, Splits};
pub use synthetic::{
    class_sizes, generate_synthetic, generate_synthetic_records, SyntheticConfig,
};

/// The three attribute views a message graph can be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "co-hashtag")]
    Hashtag,
    #[serde(rename = "co-entity")]
    Entity,
    #[serde(rename = "co-user")]
    User,
}

impl View {
    pub const ALL: [View; 3] = [View::Hashtag, View::Entity, View::User];

    pub fn name(self) -> &'static str {
        match self {
            View::Hashtag => "co-hashtag",
            View::Entity => "co-entity",
            View::User => "co-user",
        }
    }

    pub fn tokens(self, record: &MessageRecord) -> &[String] {
        match self {
            View::Hashtag => &record.hashtags,
            View::Entity => &record.entities,
            View::User => &record.users,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One attributed message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: u64,
    pub label: usize,
    /// Publication time in days.
    pub timestamp: f64,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub users: Vec<String>,
    pub features: Vec<f64>,
}

/// Undirected message graph for one view, stored as sorted CSR neighbor
/// lists. Every node carries a self-loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGraph {
    pub view: View,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    timestamps: Vec<f64>,
}

impl ViewGraph {
    /// Builds a graph from raw CSR parts, validating symmetry and self-loops.
    pub fn from_parts(
        view: View,
        offsets: Vec<usize>,
        neighbors: Vec<usize>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        let g = Self {
            view,
            offsets,
            neighbors,
            timestamps,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks CSR consistency, sorted neighbor lists, self-loops and symmetry.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Shape { op: "view graph", detail });
        let n = self.timestamps.len();
        if self.offsets.len() != n + 1 || self.offsets.last() != Some(&self.neighbors.len()) {
            return bad(alloc::format!("offsets inconsistent with {n} nodes"));
        }
        for i in 0..n {
            let nb = self.neighbors(i);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return bad(alloc::format!("neighbors of {i} not strictly sorted"));
            }
            if nb.binary_search(&i).is_err() {
                return bad(alloc::format!("node {i} lacks a self-loop"));
            }
            for &j in nb {
                if j >= n || self.neighbors(j).binary_search(&i).is_err() {
                    return bad(alloc::format!("edge ({i}, {j}) not symmetric"));
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn adjacency(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges `(i, j)` with `i < j`, self-loops excluded.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count())
            .flat_map(move |i| self.neighbors(i).iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        (self.neighbors.len() - self.node_count()) / 2
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.node_count()).all(|i| self.neighbors(i).iter().all(|&j| self.is_adjacent(j, i)))
    }

    /// Neighborhoods with per-edge absolute time gaps for attention.
    pub fn neighborhood(&self) -> TemporalNeighborhood {
        let gaps = (0..self.node_count())
            .flat_map(|i| {
                let ti = self.timestamps[i];
                self.neighbors(i).iter().map(move |&j| (self.timestamps[j] - ti).abs())
            })
            .collect();
        TemporalNeighborhood {
            offsets: self.offsets.clone(),
            neighbors: self.neighbors.clone(),
            gaps,
        }
    }
}

/// Connects every pair of messages sharing at least one token of `view`,
/// plus a self-loop on every node.
pub fn build_view_graph(records: &[MessageRecord], view: View) -> ViewGraph {
    let mut by_token: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for t in view.tokens(r) {
            let members = by_token.entry(t.as_str()).or_default();
            if members.last() != Some(&i) {
                members.push(i);
            }
        }
    }
    let mut lists: Vec<Vec<usize>> = (0..records.len()).map(|i| alloc::vec![i]).collect();
    for members in by_token.values() {
        for &i in members {
            lists[i].extend_from_slice(members);
        }
    }
    let mut offsets = Vec::with_capacity(records.len() + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for mut l in lists {
        l.sort_unstable();
        l.dedup();
        neighbors.extend(l);
        offsets.push(neighbors.len());
    }
    ViewGraph {
        view,
        offsets,
        neighbors,
        timestamps: records.iter().map(|r| r.timestamp).collect(),
    }
}

/// Fraction of non-self-loop edges joining same-label endpoints.
///
/// Returns `Ok(None)` when the graph has no such edges (the ratio is
/// undefined).
pub fn edge_quality(graph: &ViewGraph, labels: &[usize]) -> Result<Option<f64>> {
    if labels.len() != graph.node_count() {
        return Err(Error::Shape {
            op: "edge_quality",
            detail: alloc::format!("{} labels for {} nodes", labels.len(), graph.node_count()),
        });
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for (i, j) in graph.edges() {
        total += 1;
        if labels[i] == labels[j] {
            correct += 1;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}
