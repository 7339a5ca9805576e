//! Graph collections: the in-memory model, TUDataset text I/O, synthetic
//! motif corpora and stratified fold plans.

mod folds;
mod synth;
mod tudataset;

pub use folds::{make_folds, FoldPlan};
pub use synth::{degree_features, synth_motif_corpus, MotifSpec, SYNTH_FEATURE_DIM};
pub use tudataset::{parse_tudataset, parse_tudataset_slice, write_tudataset};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labeled graph. Edges are undirected, stored once as `(u, v)` with
/// `u < v`, and never contain self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `num_nodes x feature_dim`.
    pub features: Tensor,
    pub label: usize,
}

impl Graph {
    /// Normalizes an edge list: orders endpoints, drops self-loops and
    /// duplicates. Fails on endpoints outside `[0, num_nodes)`.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>, features: Tensor, label: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::contract("graph without nodes"));
        }
        if features.rows() != num_nodes {
            return Err(Error::shape(format!(
                "features have {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        let mut norm = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::contract(format!("edge ({u}, {v}) outside {num_nodes} nodes")));
            }
            if u != v {
                norm.push((u.min(v), u.max(v)));
            }
        }
        norm.sort_unstable();
        norm.dedup();
        Ok(Self {
            num_nodes,
            edges: norm,
            features,
            label,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// How node features were assembled, kept so a dataset can be written back.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureLayout {
    /// Original node-label tuples, in one-hot column order. Empty when the
    /// dataset had no node labels.
    pub node_label_values: Vec<Vec<i64>>,
    /// Number of real-valued attribute columns following the one-hot block.
    pub attribute_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Original graph-label value of each remapped class.
    pub label_values: Vec<i64>,
    pub layout: FeatureLayout,
}

impl Dataset {
    /// Checks uniform feature width, label range and class coverage.
    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() {
            return Err(Error::contract(format!("dataset `{}` is empty", self.name)));
        }
        let mut seen = vec![false; self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            if g.feature_dim() != self.feature_dim {
                return Err(Error::shape(format!(
                    "graph {i} has feature width {} != {}",
                    g.feature_dim(),
                    self.feature_dim
                )));
            }
            if g.label >= self.num_classes {
                return Err(Error::contract(format!("graph {i} label {} out of range", g.label)));
            }
            seen[g.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("class {c} has no graphs")));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for g in &self.graphs {
            c[g.label] += 1;
        }
        c
    }

    /// Keeps the first `n` graphs and compacts labels to those still present.
    pub fn truncated(&self, n: usize) -> Dataset {
        let graphs: Vec<Graph> = self.graphs.iter().take(n).cloned().collect();
        let mut remap = vec![usize::MAX; self.num_classes];
        let mut label_values = Vec::new();
        let mut out = Vec::with_capacity(graphs.len());
        for mut g in graphs {
            if remap[g.label] == usize::MAX {
                remap[g.label] = label_values.len();
                label_values.push(self.label_values[g.label]);
            }
            g.label = remap[g.label];
            out.push(g);
        }
        Dataset {
            name: self.name.clone(),
            num_classes: label_values.len(),
            graphs: out,
            feature_dim: self.feature_dim,
            label_values,
            layout: self.layout.clone(),
        }
    }
}
