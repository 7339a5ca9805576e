use std::collections::BTreeMap;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, Pooling};
use crate::batch::GraphBatch;
use crate::error::{Error, Result};
use crate::mi::kl_compression;
use crate::nn::{param, Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::rng::{rng_for, Rng};
use crate::sparse::RowOperator;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::views::{survival_mask, ViewSet};

/// `ReLU(P h w)` with `P` the normalized propagation operator of a batch.
pub fn gcn_layer(tape: &mut Tape, h: Var, propagation: &Arc<RowOperator>, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let p = tape.row_op(propagation, hw)?;
    Ok(tape.relu(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Samples the stochastic head with noise drawn from `noise_seed`.
    Train { noise_seed: u64 },
    /// Uses the mean of the stochastic head.
    Eval,
}

/// Input adapter and per-view decoders for one input width.
#[derive(Clone, Debug)]
pub struct DatasetHead {
    pub store: ParamStore,
    adapter: Linear,
    decoders: Vec<Mlp>,
    pub frozen: bool,
}

#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub cfg: ModelConfig,
    /// Encoders, fusion weights, stochastic head and classifier.
    pub backbone: ParamStore,
    encoders: Vec<Vec<ParamId>>,
    theta: ParamId,
    mu: Linear,
    logvar: Linear,
    classifier: Linear,
    /// Heads keyed by input feature width.
    pub heads: BTreeMap<usize, DatasetHead>,
    pub frozen: bool,
}

/// Tape handles produced by [`teacher_forward`].
#[derive(Clone, Debug)]
pub struct TeacherOutput {
    /// Fused per-node embedding over base-batch rows.
    pub z_nodes: Var,
    pub z_graph: Var,
    pub kl: Var,
    pub logits: Var,
    pub mu: Var,
    pub logvar: Var,
    /// Per-view pooled encodings stacked view-major: `(V * G) x hidden`.
    pub view_graph: Var,
    pub view_ids: Vec<usize>,
    pub view_labels: Vec<usize>,
    /// Base nodes present in at least one view.
    pub survivors: usize,
}

impl TeacherModel {
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.num_views == 0 || cfg.gcn_layers == 0 {
            return Err(Error::config("model", "need at least one view and one layer"));
        }
        let mut s = ParamStore::new();
        let mut encoders = Vec::with_capacity(cfg.num_views);
        for v in 0..cfg.num_views {
            let mut layers = Vec::with_capacity(cfg.gcn_layers);
            for l in 0..cfg.gcn_layers {
                let fan_in = if l == 0 { cfg.adapter_width } else { cfg.hidden };
                layers.push(s.glorot(&format!("encoder{v}.gcn{l}"), fan_in, cfg.hidden, rng)?);
            }
            encoders.push(layers);
        }
        let theta = s.zeros("fusion.theta", 1, cfg.num_views)?;
        let mu = Linear::new(&mut s, "head.mu", cfg.hidden, cfg.hidden, true, rng)?;
        let logvar = Linear::new(&mut s, "head.logvar", cfg.hidden, cfg.hidden, true, rng)?;
        let classifier = Linear::new(&mut s, "classifier", cfg.hidden, cfg.num_classes, true, rng)?;
        Ok(Self {
            cfg,
            backbone: s,
            encoders,
            theta,
            mu,
            logvar,
            classifier,
            heads: BTreeMap::new(),
            frozen: false,
        })
    }

    /// Adds a trainable head for input width `feature_dim` unless one exists.
    pub fn ensure_head(&mut self, feature_dim: usize, rng: &mut Rng) -> Result<()> {
        if self.heads.contains_key(&feature_dim) {
            return Ok(());
        }
        let mut s = ParamStore::new();
        let tag = format!("head{feature_dim}");
        let adapter = Linear::new(&mut s, &format!("{tag}.adapter"), feature_dim, self.cfg.adapter_width, true, rng)?;
        let decoders = (0..self.cfg.num_views)
            .map(|v| Mlp::new(&mut s, &format!("{tag}.decoder{v}"), &[self.cfg.hidden, self.cfg.hidden, feature_dim], rng))
            .collect::<Result<_>>()?;
        self.heads.insert(
            feature_dim,
            DatasetHead {
                store: s,
                adapter,
                decoders,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn head(&self, feature_dim: usize) -> Result<&DatasetHead> {
        self.heads
            .get(&feature_dim)
            .ok_or_else(|| Error::contract(format!("teacher has no head for feature width {feature_dim}")))
    }

    pub fn head_mut(&mut self, feature_dim: usize) -> Result<&mut DatasetHead> {
        self.heads
            .get_mut(&feature_dim)
            .ok_or_else(|| Error::contract(format!("teacher has no head for feature width {feature_dim}")))
    }

    /// Freezes the backbone and every existing head.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.heads.values_mut().for_each(|h| h.frozen = true);
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
        self.heads.values_mut().for_each(|h| h.frozen = false);
    }

    /// SHA-256 over the backbone and all frozen heads.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.backbone.checksum());
        for (d, head) in &self.heads {
            if head.frozen || !self.frozen {
                h.update(d.to_le_bytes());
                h.update(head.store.checksum());
            }
        }
        hex::encode(h.finalize())
    }

    /// Softmax of the fusion parameters.
    pub fn fusion_weights(&self) -> Vec<f64> {
        let t = self.backbone.get(self.theta).data();
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    pub fn theta_id(&self) -> ParamId {
        self.theta
    }

    pub fn encoder_layer(&self, view: usize, layer: usize) -> ParamId {
        self.encoders[view][layer]
    }

    pub fn mu_head(&self) -> &Linear {
        &self.mu
    }

    pub fn logvar_head(&self) -> &Linear {
        &self.logvar
    }

    pub fn classifier_head(&self) -> &Linear {
        &self.classifier
    }

    pub fn param_count(&self) -> usize {
        self.backbone.num_scalars() + self.heads.values().map(|h| h.store.num_scalars()).sum::<usize>()
    }
}

impl DatasetHead {
    pub fn adapter(&self) -> &Linear {
        &self.adapter
    }

    pub fn decoder(&self, view: usize) -> &Mlp {
        &self.decoders[view]
    }
}

/// Graph readout of node rows `z` under `pooling`.
pub fn pool(tape: &mut Tape, z: Var, batch: &GraphBatch, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Mean | Pooling::Sum => {
            let op = Arc::new(batch.readout(pooling == Pooling::Mean));
            tape.row_op(&op, z)
        }
        Pooling::Max => {
            let zv = tape.value(z);
            let d = zv.cols();
            let mut index = Vec::with_capacity(batch.num_graphs() * d);
            for g in 0..batch.num_graphs() {
                for j in 0..d {
                    let mut best = batch.offsets[g];
                    for i in batch.offsets[g]..batch.offsets[g + 1] {
                        if zv.get(i, j) > zv.get(best, j) {
                            best = i;
                        }
                    }
                    index.push(best * d + j);
                }
            }
            tape.entries(z, Arc::new(index), batch.num_graphs(), d)
        }
    }
}

/// Multi-view encoding, masked softmax fusion, stochastic head, readout and
/// classifier.
pub fn teacher_forward(tape: &mut Tape, views: &ViewSet, model: &TeacherModel, mode: Mode) -> Result<TeacherOutput> {
    let cfg = &model.cfg;
    let v_count = views.len();
    if v_count != cfg.num_views {
        return Err(Error::shape(format!("{v_count} views for a {}-view teacher", cfg.num_views)));
    }
    let base = &views.base;
    let n = base.num_nodes();
    let g_count = base.num_graphs();
    let head = model.head(base.feature_dim())?;
    let train_bb = !model.frozen;
    let train_head = !head.frozen;

    let mut scattered = Vec::with_capacity(v_count);
    let mut pooled = Vec::with_capacity(v_count);
    for (v, view) in views.views.iter().enumerate() {
        if view.num_graphs() != g_count || view.labels != base.labels {
            return Err(Error::contract("views must share graphs and labels with the base batch"));
        }
        let x = tape.constant(view.features.clone());
        let mut h = head.adapter.forward(&head.store, tape, x, train_head)?;
        let prop = Arc::new(view.propagation());
        for &w in &model.encoders[v] {
            let wv = param(&model.backbone, tape, w, train_bb);
            h = gcn_layer(tape, h, &prop, wv)?;
        }
        pooled.push(pool(tape, h, view, Pooling::Mean)?);
        let scatter = Arc::new(view.scatter_to_base(n)?);
        scattered.push(tape.row_op(&scatter, h)?);
    }

    // Per-node fusion weights renormalized over the views a node survives in.
    let mut mask = survival_mask(views);
    let mut survivors = 0;
    for i in 0..n {
        if mask.row(i).iter().all(|&m| m == 0.0) {
            for j in 0..v_count {
                mask.set(i, j, 1.0);
            }
        } else {
            survivors += 1;
        }
    }
    let mask = tape.constant(mask);
    let theta = param(&model.backbone, tape, model.theta, train_bb);
    let w = tape.softmax_rows(theta);
    let num = tape.mul(mask, w)?;
    let den = tape.sum_rows(num);
    let coef = tape.div(num, den)?;
    let mut fused: Option<Var> = None;
    for (v, s) in scattered.iter().enumerate() {
        let mut e = Tensor::zeros(v_count, 1);
        e.set(v, 0, 1.0);
        let e = tape.constant(e);
        let cv = tape.matmul(coef, e)?;
        let term = tape.mul(cv, *s)?;
        fused = Some(match fused {
            Some(f) => tape.add(f, term)?,
            None => term,
        });
    }
    let fused = fused.expect("at least one view");

    let mu = model.mu.forward(&model.backbone, tape, fused, train_bb)?;
    let logvar = model.logvar.forward(&model.backbone, tape, fused, train_bb)?;
    let z_nodes = match mode {
        Mode::Eval => mu,
        Mode::Train { noise_seed } => {
            let mut rng = rng_for(noise_seed, &[0xe95]);
            let eps: Vec<f64> = (0..n * cfg.hidden).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = tape.constant(Tensor::matrix(n, cfg.hidden, eps));
            let half = tape.scale(logvar, 0.5);
            let sd = tape.exp(half);
            let noise = tape.mul(sd, eps)?;
            tape.add(mu, noise)?
        }
    };
    let kl = kl_compression(tape, mu, logvar)?;
    let z_graph = pool(tape, z_nodes, base, cfg.pooling)?;
    let logits = model.classifier.forward(&model.backbone, tape, z_graph, train_bb)?;

    let mut stacked: Option<Var> = None;
    for (v, p) in pooled.iter().enumerate() {
        let rows = (0..v_count * g_count)
            .map(|r| if r / g_count == v { vec![(r % g_count, 1.0)] } else { vec![] })
            .collect();
        let place = Arc::new(RowOperator::from_rows(g_count, rows)?);
        let placed = tape.row_op(&place, *p)?;
        stacked = Some(match stacked {
            Some(s) => tape.add(s, placed)?,
            None => placed,
        });
    }
    let view_ids = (0..v_count * g_count).map(|r| views.view_ids[r / g_count]).collect();
    let view_labels = (0..v_count * g_count).map(|r| base.labels[r % g_count]).collect();

    Ok(TeacherOutput {
        z_nodes,
        z_graph,
        kl,
        logits,
        mu,
        logvar,
        view_graph: stacked.expect("at least one view"),
        view_ids,
        view_labels,
        survivors,
    })
}

/// Sum over views and surviving nodes of the squared error between the view's
/// node features and the view decoder applied to the fused embedding,
/// divided by the number of base nodes present in any view.
pub fn teacher_reconstruct(tape: &mut Tape, out: &TeacherOutput, model: &TeacherModel, views: &ViewSet) -> Result<Var> {
    let base_n = views.base.num_nodes();
    let head = model.head(views.base.feature_dim())?;
    let train_head = !head.frozen;
    let mut total: Option<Var> = None;
    for (j, view) in views.views.iter().enumerate() {
        let gather = Arc::new(RowOperator::gather(&view.base_nodes, base_n)?);
        let zj = tape.row_op(&gather, out.z_nodes)?;
        let xhat = head.decoders[j].forward(&head.store, tape, zj, train_head)?;
        let x = tape.constant(view.features.clone());
        let diff = tape.sub(xhat, x)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| Error::contract("no views"))?;
    Ok(tape.scale(total, 1.0 / out.survivors.max(1) as f64))
}
