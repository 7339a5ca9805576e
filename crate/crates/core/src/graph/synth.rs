//! Balanced two-class motif corpora: cycles versus stars, plus random edges.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureLayout, Graph};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Width of the degree features: one-hot of `min(deg, 6)` plus normalized degree.
pub const SYNTH_FEATURE_DIM: usize = 8;
const MAX_DEG_BUCKET: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub name: String,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Expected number of random extra edges per graph (Poisson mean).
    pub noise_edges: f64,
}

impl MotifSpec {
    pub fn clean() -> Self {
        Self {
            name: "synth-clean".into(),
            min_nodes: 8,
            max_nodes: 14,
            noise_edges: 0.2,
        }
    }

    /// Larger, noisier graphs than [`MotifSpec::clean`].
    pub fn shifted() -> Self {
        Self {
            name: "synth-shifted".into(),
            min_nodes: 14,
            max_nodes: 22,
            noise_edges: 1.5,
        }
    }

    pub fn by_name(variant: &str) -> Result<Self> {
        match variant {
            "clean" => Ok(Self::clean()),
            "shifted" => Ok(Self::shifted()),
            other => Err(Error::config("synthetic", format!("unknown variant `{other}` (clean|shifted)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_nodes < 4 || self.max_nodes < self.min_nodes {
            return Err(Error::config("synthetic", "node range must satisfy 4 <= min <= max"));
        }
        if !(self.noise_edges >= 0.0 && self.noise_edges.is_finite()) {
            return Err(Error::config("synthetic", "noise_edges must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Degree features for `n` nodes with edge list `edges`.
pub fn degree_features(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut deg = vec![0usize; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut t = Tensor::zeros(n, SYNTH_FEATURE_DIM);
    for (i, &d) in deg.iter().enumerate() {
        t.set(i, d.min(MAX_DEG_BUCKET), 1.0);
        t.set(i, SYNTH_FEATURE_DIM - 1, d as f64 / (n - 1) as f64);
    }
    t
}

/// Generates `n_graphs` graphs, half cycles (class 0) and half stars
/// (class 1), in shuffled order.
pub fn synth_motif_corpus(n_graphs: usize, seed: u64, spec: &MotifSpec) -> Result<Dataset> {
    if n_graphs < 20 || !n_graphs.is_multiple_of(2) {
        return Err(Error::config("n_graphs", format!("need an even count >= 20, got {n_graphs}")));
    }
    spec.validate()?;
    let mut rng = rng_for(seed, &[0x5e17]);
    let mut labels: Vec<usize> = (0..n_graphs).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let noise = if spec.noise_edges > 0.0 {
        Some(Poisson::new(spec.noise_edges).map_err(|e| Error::config("noise_edges", e.to_string()))?)
    } else {
        None
    };
    let mut graphs = Vec::with_capacity(n_graphs);
    for label in labels {
        let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
        let mut edges: Vec<(usize, usize)> = if label == 0 {
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        } else {
            (1..n).map(|i| (0, i)).collect()
        };
        let extra = noise.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..extra {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v {
                edges.push((u, v));
            }
        }
        // Relabel nodes so the motif center is not always node 0.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let edges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let probe = Graph::new(n, edges, Tensor::zeros(n, 1), label)?;
        let features = degree_features(n, &probe.edges);
        graphs.push(Graph { features, ..probe });
    }
    let ds = Dataset {
        name: spec.name.clone(),
        graphs,
        num_classes: 2,
        feature_dim: SYNTH_FEATURE_DIM,
        label_values: vec![0, 1],
        layout: FeatureLayout {
            node_label_values: vec![],
            attribute_dim: SYNTH_FEATURE_DIM,
        },
    };
    ds.validate()?;
    Ok(ds)
}
