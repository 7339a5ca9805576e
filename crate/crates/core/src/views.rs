//! Stochastic augmented views of a graph batch.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::GraphBatch;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewKind {
    NodeDrop,
    EdgePerturb,
    FeatureMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub kind: ViewKind,
    pub rate: f64,
    #[serde(default)]
    pub seed_stream: u64,
}

impl ViewSpec {
    pub fn new(kind: ViewKind, rate: f64, seed_stream: u64) -> Self {
        Self { kind, rate, seed_stream }
    }

    /// Node dropping and edge perturbation at rate 0.1.
    pub fn defaults() -> Vec<ViewSpec> {
        vec![
            ViewSpec::new(ViewKind::NodeDrop, 0.1, 0),
            ViewSpec::new(ViewKind::EdgePerturb, 0.1, 1),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.rate) {
            Ok(())
        } else {
            Err(Error::config("views.rate", format!("{} is outside [0, 1]", self.rate)))
        }
    }
}

/// The augmented variants of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub views: Vec<GraphBatch>,
    pub view_ids: Vec<usize>,
    pub base: Arc<GraphBatch>,
}

impl ViewSet {
    /// Every view is the unaugmented batch.
    pub fn identity(base: Arc<GraphBatch>, v: usize) -> Self {
        Self {
            views: vec![(*base).clone(); v],
            view_ids: (0..v).collect(),
            base,
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

pub fn augment(batch: &GraphBatch, spec: &ViewSpec, rng: &mut Rng) -> Result<GraphBatch> {
    spec.validate()?;
    if spec.rate == 0.0 {
        return Ok(batch.clone());
    }
    match spec.kind {
        ViewKind::NodeDrop => Ok(node_drop(batch, spec.rate, rng)),
        ViewKind::EdgePerturb => Ok(edge_perturb(batch, spec.rate, rng)),
        ViewKind::FeatureMask => {
            let mut out = batch.clone();
            for x in out.features.data_mut() {
                if rng.random::<f64>() < spec.rate {
                    *x = 0.0;
                }
            }
            Ok(out)
        }
    }
}

/// Builds `specs.len()` views, each from its own stream of `epoch_seed`.
pub fn make_view_set(base: Arc<GraphBatch>, specs: &[ViewSpec], epoch_seed: u64) -> Result<ViewSet> {
    if specs.len() < 2 {
        return Err(Error::contract(format!("need at least 2 views, got {}", specs.len())));
    }
    let views = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = rng_for(epoch_seed, &[0x71e3, i as u64, s.seed_stream]);
            augment(&base, s, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet {
        views,
        view_ids: (0..specs.len()).collect(),
        base,
    })
}

/// Cut vertices of an undirected graph (iterative Tarjan low-link).
pub fn articulation_points(n: usize, adj: &[Vec<usize>], alive: &[bool]) -> Vec<bool> {
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut cut = vec![false; n];
    let mut timer = 0;
    for root in 0..n {
        if !alive[root] || disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        let mut root_children = 0;
        // (node, parent, next neighbor position)
        let mut stack = vec![(root, usize::MAX, 0usize)];
        while let Some(&mut (u, parent, ref mut pos)) = stack.last_mut() {
            if *pos < adj[u].len() {
                let w = adj[u][*pos];
                *pos += 1;
                if !alive[w] || w == parent {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    if u == root {
                        root_children += 1;
                    }
                    stack.push((w, u, 0));
                } else {
                    low[u] = low[u].min(disc[w]);
                }
            } else {
                stack.pop();
                if parent != usize::MAX {
                    low[parent] = low[parent].min(low[u]);
                    if parent != root && low[u] >= disc[parent] {
                        cut[parent] = true;
                    }
                }
            }
        }
        cut[root] = root_children > 1;
    }
    cut
}

fn node_drop(batch: &GraphBatch, rate: f64, rng: &mut Rng) -> GraphBatch {
    let mut rows = Vec::new();
    let mut offsets = vec![0];
    let mut all_edges = Vec::with_capacity(batch.num_graphs());
    for g in 0..batch.num_graphs() {
        let n = batch.graph_size(g);
        let k = ((rate * n as f64).floor() as usize).min(n - 1);
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &batch.edges[g] {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut alive = vec![true; n];
        for _ in 0..k {
            let cut = articulation_points(n, &adj, &alive);
            let candidates: Vec<usize> = (0..n).filter(|&i| alive[i] && !cut[i]).collect();
            // Every finite graph with an edge or two vertices has a non-cut vertex.
            let &pick = candidates.choose(rng).expect("non-cut vertex");
            alive[pick] = false;
        }
        let mut local = vec![usize::MAX; n];
        let mut kept = 0;
        for i in 0..n {
            if alive[i] {
                local[i] = kept;
                kept += 1;
                rows.push(batch.offsets[g] + i);
            }
        }
        offsets.push(offsets.last().copied().unwrap_or(0) + kept);
        all_edges.push(
            batch.edges[g]
                .iter()
                .filter(|&&(u, v)| alive[u] && alive[v])
                .map(|&(u, v)| (local[u], local[v]))
                .collect(),
        );
    }
    GraphBatch {
        features: batch.features.select_rows(&rows),
        base_nodes: rows.iter().map(|&r| batch.base_nodes[r]).collect(),
        edges: all_edges,
        offsets,
        labels: batch.labels.clone(),
    }
}

fn edge_perturb(batch: &GraphBatch, rate: f64, rng: &mut Rng) -> GraphBatch {
    let mut out = batch.clone();
    for g in 0..batch.num_graphs() {
        let n = batch.graph_size(g);
        let original: HashSet<(usize, usize)> = batch.edges[g].iter().copied().collect();
        let mut kept = Vec::with_capacity(original.len());
        let mut deleted = 0;
        for &e in &batch.edges[g] {
            if rng.random::<f64>() < rate {
                deleted += 1;
            } else {
                kept.push(e);
            }
        }
        let capacity = n * (n - 1) / 2 - original.len();
        let mut to_add = deleted.min(capacity);
        if to_add > 0 {
            let mut candidates: Vec<(usize, usize)> = Vec::new();
            if capacity <= 4 * to_add + 16 {
                for u in 0..n {
                    for v in u + 1..n {
                        if !original.contains(&(u, v)) {
                            candidates.push((u, v));
                        }
                    }
                }
                candidates.shuffle(rng);
                kept.extend(candidates.into_iter().take(to_add));
            } else {
                let mut added = HashSet::new();
                while to_add > 0 {
                    let u = rng.random_range(0..n);
                    let v = rng.random_range(0..n);
                    let e = (u.min(v), u.max(v));
                    if u != v && !original.contains(&e) && added.insert(e) {
                        kept.push(e);
                        to_add -= 1;
                    }
                }
            }
        }
        kept.sort_unstable();
        out.edges[g] = kept;
    }
    out
}

/// Boolean `base_nodes x V` matrix: whether base node `i` survives in view `v`.
pub fn survival_mask(views: &ViewSet) -> Tensor {
    let n = views.base.num_nodes();
    let v = views.len();
    let mut m = Tensor::zeros(n, v);
    for (j, view) in views.views.iter().enumerate() {
        for &b in &view.base_nodes {
            m.set(b, j, 1.0);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn cycle(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)), Tensor::identity(n), 1).unwrap()
    }

    #[test]
    fn articulation_points_of_path_and_star() {
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        assert_eq!(articulation_points(4, &adj, &[true; 4]), vec![false, true, true, false]);
        let star = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        assert_eq!(articulation_points(4, &star, &[true; 4]), vec![true, false, false, false]);
        let tri = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        assert_eq!(articulation_points(3, &tri, &[true; 3]), vec![false; 3]);
    }

    #[test]
    fn node_drop_half_of_four() {
        let g = cycle(4);
        let base = GraphBatch::from_graphs(&[&g]).unwrap();
        let mut rng = rng_for(3, &[]);
        let v = augment(&base, &ViewSpec::new(ViewKind::NodeDrop, 0.5, 0), &mut rng).unwrap();
        assert_eq!(v.num_nodes(), 2);
        v.validate().unwrap();
        assert_eq!(v.labels, base.labels);
    }

    #[test]
    fn star_hub_survives_node_drop() {
        let g = Graph::new(6, (1..6).map(|i| (0, i)), Tensor::identity(6), 0).unwrap();
        let base = GraphBatch::from_graphs(&[&g]).unwrap();
        for s in 0..20 {
            let mut rng = rng_for(s, &[]);
            let v = augment(&base, &ViewSpec::new(ViewKind::NodeDrop, 0.5, 0), &mut rng).unwrap();
            assert!(v.base_nodes.contains(&0));
        }
    }

    #[test]
    fn identity_view_set_copies_base() {
        let g = cycle(5);
        let base = Arc::new(GraphBatch::from_graphs(&[&g]).unwrap());
        let specs = vec![ViewSpec::new(ViewKind::NodeDrop, 0.0, 0), ViewSpec::new(ViewKind::EdgePerturb, 0.0, 1)];
        let vs = make_view_set(base.clone(), &specs, 9).unwrap();
        assert_eq!(vs.views[0], *base);
        assert_eq!(vs.views[1], *base);
        assert!(make_view_set(base, &specs[..1], 9).is_err());
    }
}
