//! Stacked mini-batches of graphs and the sparse operators built from them.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::sparse::RowOperator;
use crate::tensor::Tensor;

/// Several graphs stacked into one node matrix. Graph `g` owns node rows
/// `offsets[g]..offsets[g + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub features: Tensor,
    /// Per-graph undirected edges in local indices, `u < v`.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub offsets: Vec<usize>,
    pub labels: Vec<usize>,
    /// Row of each node in the unaugmented batch it was derived from.
    pub base_nodes: Vec<usize>,
}

impl GraphBatch {
    pub fn from_graphs(graphs: &[&Graph]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::contract("empty batch"))?;
        let d = first.feature_dim();
        let mut data = Vec::new();
        let mut offsets = vec![0];
        let mut edges = Vec::with_capacity(graphs.len());
        let mut labels = Vec::with_capacity(graphs.len());
        for g in graphs {
            if g.feature_dim() != d {
                return Err(Error::shape("graphs in a batch need equal feature width"));
            }
            data.extend_from_slice(g.features.data());
            offsets.push(offsets.last().copied().unwrap_or(0) + g.num_nodes);
            edges.push(g.edges.clone());
            labels.push(g.label);
        }
        let n = *offsets.last().expect("offsets");
        Ok(Self {
            features: Tensor::matrix(n, d, data),
            edges,
            offsets,
            labels,
            base_nodes: (0..n).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().expect("offsets")
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn graph_size(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    /// Graph index of every node.
    pub fn node_graph(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_nodes());
        for g in 0..self.num_graphs() {
            out.extend(std::iter::repeat_n(g, self.graph_size(g)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("batch offsets must be strictly increasing"));
        }
        if self.features.rows() != self.num_nodes() || self.base_nodes.len() != self.num_nodes() {
            return Err(Error::shape("batch node count mismatch"));
        }
        for (g, es) in self.edges.iter().enumerate() {
            let n = self.graph_size(g);
            if es.iter().any(|&(u, v)| u >= v || v >= n) {
                return Err(Error::contract(format!("graph {g} has an invalid edge")));
            }
        }
        Ok(())
    }

    /// Symmetric-normalized adjacency with self-loops,
    /// `D^-1/2 (A + I) D^-1/2`, block-diagonal over graphs.
    pub fn propagation(&self) -> RowOperator {
        let n = self.num_nodes();
        let mut deg = vec![1.0f64; n];
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 0.0)]).collect();
        for (g, es) in self.edges.iter().enumerate() {
            let off = self.offsets[g];
            for &(u, v) in es {
                deg[off + u] += 1.0;
                deg[off + v] += 1.0;
            }
        }
        let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            row[0].1 = inv[i] * inv[i];
        }
        for (g, es) in self.edges.iter().enumerate() {
            let off = self.offsets[g];
            for &(u, v) in es {
                let (a, b) = (off + u, off + v);
                let w = inv[a] * inv[b];
                rows[a].push((b, w));
                rows[b].push((a, w));
            }
        }
        RowOperator::from_rows(n, rows).expect("indices in range")
    }

    /// `graphs x nodes` operator averaging (`mean = true`) or summing each
    /// graph's node rows.
    pub fn readout(&self, mean: bool) -> RowOperator {
        let rows = (0..self.num_graphs())
            .map(|g| {
                let size = self.graph_size(g);
                let w = if mean { 1.0 / size as f64 } else { 1.0 };
                (self.offsets[g]..self.offsets[g + 1]).map(|i| (i, w)).collect()
            })
            .collect();
        RowOperator::from_rows(self.num_nodes(), rows).expect("indices in range")
    }

    /// `base_count x nodes` operator placing each node's row at its base row.
    pub fn scatter_to_base(&self, base_count: usize) -> Result<RowOperator> {
        let mut rows = vec![Vec::new(); base_count];
        for (i, &b) in self.base_nodes.iter().enumerate() {
            if b >= base_count {
                return Err(Error::shape(format!("base node {b} outside {base_count}")));
            }
            rows[b].push((i, 1.0));
        }
        RowOperator::from_rows(self.num_nodes(), rows)
    }
}
