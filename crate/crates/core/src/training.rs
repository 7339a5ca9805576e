//! Two-phase schedule: joint pretraining and frozen-teacher adaptation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::GraphBatch;
use crate::error::{Error, Result};
use crate::graph::{Dataset, FoldPlan};
use crate::mi::{ba_from_log_q, club_from_log_q};
use crate::models::{student_forward, teacher_forward, DibodModel, Mode};
use crate::objectives::{log_probs, loss_total, KappaSource, LossInputs, LossValues, LossWeights, PhaseKind, TrainPhase};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_for};
use crate::ssr::SsrState;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::views::{make_view_set, ViewSet, ViewSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub views: Vec<ViewSpec>,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            critic_lr: 0.001,
            batch_size: 32,
            views: ViewSpec::defaults(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("{} must be > 0", self.lr)));
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return Err(Error::config("train.critic_lr", format!("{} must be > 0", self.critic_lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        if self.views.len() < 2 {
            return Err(Error::config("train.views", "need at least two views"));
        }
        for v in &self.views {
            v.validate()?;
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Evaluation-mode metrics of one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: Split,
    pub losses: LossValues,
    pub accuracy: f64,
    pub teacher_accuracy: f64,
    pub student_accuracy: f64,
    /// KL compression of `z_vs` under a unit-variance Gaussian channel.
    pub i_zvs_x_proxy: f64,
    /// Lower bound through the invariant classifier.
    pub i_zvs_y: f64,
    /// Upper bound through the redundant-subspace classifier.
    pub i_zvr_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub losses: LossValues,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    /// Rows for epochs `0..=E`; epoch 0 precedes any update.
    pub rows: Vec<EpochRow>,
    pub batches: Vec<BatchRecord>,
}

pub const METRICS_HEADER: [&str; 15] = [
    "epoch",
    "split",
    "task",
    "ibt",
    "ibs",
    "recon",
    "ckd",
    "orth",
    "total",
    "accuracy",
    "teacher_accuracy",
    "student_accuracy",
    "I_zvs_x_proxy",
    "I_zvs_y",
    "I_zvr_y",
];

impl MetricsLog {
    pub fn rows_for(&self, split: Split) -> impl Iterator<Item = &EpochRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&EpochRow> {
        self.rows_for(split).last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = METRICS_HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.epoch, r.split.name());
            for v in r.losses.as_array() {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(
                s,
                ",{},{},{},{},{},{}",
                r.accuracy, r.teacher_accuracy, r.student_accuracy, r.i_zvs_x_proxy, r.i_zvs_y, r.i_zvr_y
            );
        }
        s
    }

    pub fn batches_csv(&self) -> String {
        let mut s = String::from("epoch,batch,size");
        for n in LossValues::names() {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for b in &self.batches {
            let _ = write!(s, "{},{},{}", b.epoch, b.batch, b.size);
            for v in b.losses.as_array() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub log: MetricsLog,
    /// Regularizer state at the start of adaptation.
    pub ssr: Option<SsrState>,
    pub teacher_checksum_start: String,
    pub teacher_checksum_end: String,
}

struct Optimizers {
    backbone: Adam,
    heads: BTreeMap<usize, Adam>,
    student: Adam,
}

impl Optimizers {
    fn new(model: &DibodModel, lr: f64) -> Self {
        Self {
            backbone: Adam::new(&model.teacher.backbone, lr),
            heads: model.teacher.heads.iter().map(|(&d, h)| (d, Adam::new(&h.store, lr))).collect(),
            student: Adam::new(&model.student.store, lr),
        }
    }
}

/// Consecutive chunks of at most `size`; a trailing singleton joins the
/// previous chunk.
fn chunks(idx: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

fn batch_of(ds: &Dataset, idx: &[usize]) -> Result<Arc<GraphBatch>> {
    let graphs: Vec<_> = idx.iter().map(|&i| &ds.graphs[i]).collect();
    Ok(Arc::new(GraphBatch::from_graphs(&graphs)?))
}

fn accuracy(logits: &Tensor, y: &[usize]) -> f64 {
    let p = logits.argmax_rows();
    p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn kappa_for_indices(ssr: Option<&SsrState>, train: &[usize], idx: &[usize]) -> Vec<f64> {
    match ssr {
        None => vec![1.0; idx.len()],
        Some(s) => idx
            .iter()
            .map(|i| {
                let pos = train.iter().position(|t| t == i).expect("batch drawn from the training split");
                s.kappa[pos]
            })
            .collect(),
    }
}

/// `0.5 mean_i |z_i - mean z|^2`: the average KL from `N(z_i, I)` to
/// `N(mean z, I)`, an upper bound on `I(z + noise; X)`.
pub fn channel_kl(z: &Tensor) -> f64 {
    let (n, d) = (z.rows(), z.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        s += z.row(i).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
    }
    0.5 * s / n as f64
}

/// Regularizer state from the teacher's eval-mode class probabilities on
/// `idx`.
pub fn ssr_from_teacher(model: &DibodModel, ds: &Dataset, idx: &[usize]) -> Result<SsrState> {
    let base = batch_of(ds, idx)?;
    let views = ViewSet::identity(base.clone(), model.cfg.num_views);
    let mut tape = Tape::new();
    let t = teacher_forward(&mut tape, &views, &model.teacher, Mode::Eval)?;
    let p = tape.softmax_rows(t.logits);
    SsrState::from_predictions(tape.value(p), &base.labels)
}

/// Evaluation-mode losses, accuracies and MI estimates on `idx`.
pub fn evaluate(
    model: &DibodModel,
    ds: &Dataset,
    idx: &[usize],
    kappa: &[f64],
    weights: &LossWeights,
    phase: PhaseKind,
) -> Result<(LossValues, [f64; 3], [f64; 3])> {
    let base = batch_of(ds, idx)?;
    let views = ViewSet::identity(base.clone(), model.cfg.num_views);
    let mut tape = Tape::new();
    let t = teacher_forward(&mut tape, &views, &model.teacher, Mode::Eval)?;
    let s = student_forward(&mut tape, t.z_graph, &model.student)?;
    let terms = loss_total(
        &mut tape,
        &LossInputs {
            views: &views,
            teacher: &model.teacher,
            teacher_out: &t,
            student_out: &s,
            critics: &model.critics,
            kappa,
            weights,
            phase,
        },
    )?;
    if let Some(term) = terms.first_non_finite(&tape) {
        return Err(Error::NonFinite { term: term.into() });
    }
    let y = &base.labels;
    let lq_vs = log_probs(&mut tape, s.logits_vs);
    let ba_vs = ba_from_log_q(&mut tape, lq_vs, y)?;
    let club_vr = club_from_log_q(&mut tape, s.logits_vr, y)?;
    let acc_t = accuracy(tape.value(t.logits), y);
    let acc_s = accuracy(tape.value(s.logits_vs), y);
    let acc = match phase {
        PhaseKind::Pretrain => acc_t,
        PhaseKind::Adapt => acc_s,
    };
    Ok((
        terms.values(&tape),
        [acc, acc_t, acc_s],
        [channel_kl(tape.value(s.z_vs)), tape.scalar(ba_vs), tape.scalar(club_vr)],
    ))
}

fn log_rows(
    log: &mut MetricsLog,
    epoch: usize,
    model: &DibodModel,
    ds: &Dataset,
    splits: [(&[usize], Split); 2],
    ssr: Option<&SsrState>,
    train: &[usize],
    weights: &LossWeights,
    phase: PhaseKind,
) -> Result<()> {
    for (idx, split) in splits {
        if idx.len() < 2 {
            continue;
        }
        let kappa = match split {
            Split::Train => kappa_for_indices(ssr, train, idx),
            Split::Test => vec![1.0; idx.len()],
        };
        let (losses, acc, mi) = evaluate(model, ds, idx, &kappa, weights, phase)?;
        log.rows.push(EpochRow {
            epoch,
            split,
            losses,
            accuracy: acc[0],
            teacher_accuracy: acc[1],
            student_accuracy: acc[2],
            i_zvs_x_proxy: mi[0],
            i_zvs_y: mi[1],
            i_zvr_y: mi[2],
        });
    }
    Ok(())
}

/// Runs one phase on fold `fold` of `plan` over `ds`.
///
/// Pretraining updates teacher, student and critics jointly. Adaptation
/// freezes the teacher (unless `phase.teacher_frozen` is false), verifies its
/// checksum after every epoch, and weights the student bottleneck with the
/// regularizer computed from the teacher on the training split.
pub fn run_phase(
    model: &mut DibodModel,
    ds: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    phase: TrainPhase,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseResult> {
    cfg.validate()?;
    plan.check_fold(fold)?;
    if plan.assignment.len() != ds.graphs.len() {
        return Err(Error::contract("fold plan does not match the dataset"));
    }
    if ds.num_classes != model.cfg.num_classes {
        return Err(Error::contract(format!(
            "dataset has {} classes, model expects {}",
            ds.num_classes, model.cfg.num_classes
        )));
    }
    if cfg.views.len() != model.cfg.num_views {
        return Err(Error::contract("view count differs from the model's"));
    }
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    if train.len() < 2 {
        return Err(Error::contract("training split needs at least 2 graphs"));
    }

    if phase.teacher_frozen {
        model.teacher.freeze();
    } else {
        model.teacher.unfreeze();
    }
    let mut rng = rng_for(seed, &[0x4ead]);
    model.teacher.ensure_head(ds.feature_dim, &mut rng)?;
    let checksum_start = model.teacher.checksum();

    let mut ssr = match phase.kappa {
        KappaSource::Ssr => Some(ssr_from_teacher(model, ds, &train)?),
        KappaSource::Uniform => None,
    };
    let ssr_start = ssr.clone();
    let w = &cfg.weights;
    let mut log = MetricsLog::default();
    log_rows(&mut log, 0, model, ds, [(&train, Split::Train), (&test, Split::Test)], ssr.as_ref(), &train, w, phase.kind)?;

    let mut opt = Optimizers::new(model, cfg.lr);
    for epoch in 1..=phase.epochs {
        if phase.recompute_ssr && epoch > 1 && phase.kappa == KappaSource::Ssr {
            ssr = Some(ssr_from_teacher(model, ds, &train)?);
        }
        let mut order = train.clone();
        order.shuffle(&mut rng_for(seed, &[0x5b, epoch as u64]));
        for (b, idx) in chunks(&order, cfg.batch_size).into_iter().enumerate() {
            let tags = [epoch as u64, b as u64];
            let base = batch_of(ds, &idx)?;
            let views = make_view_set(base, &cfg.views, derive_seed(seed, &[0x71e, tags[0], tags[1]]))?;
            let kappa = kappa_for_indices(ssr.as_ref(), &train, &idx);
            let losses = train_step(model, &mut opt, &views, &kappa, w, phase.kind, derive_seed(seed, &[0xe95, tags[0], tags[1]]))?;
            log.batches.push(BatchRecord {
                epoch,
                batch: b,
                size: idx.len(),
                losses,
            });
        }
        if phase.teacher_frozen && model.teacher.checksum() != checksum_start {
            return Err(Error::contract(format!("frozen teacher changed during epoch {epoch}")));
        }
        log_rows(&mut log, epoch, model, ds, [(&train, Split::Train), (&test, Split::Test)], ssr.as_ref(), &train, w, phase.kind)?;
    }
    Ok(PhaseResult {
        log,
        ssr: ssr_start,
        teacher_checksum_start: checksum_start,
        teacher_checksum_end: model.teacher.checksum(),
    })
}

/// One optimizer step of every trainable part followed by one fitting step
/// of each critic on the detached batch representations.
fn train_step(
    model: &mut DibodModel,
    opt: &mut Optimizers,
    views: &ViewSet,
    kappa: &[f64],
    w: &LossWeights,
    kind: PhaseKind,
    noise_seed: u64,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let t = teacher_forward(&mut tape, views, &model.teacher, Mode::Train { noise_seed })?;
    let s = student_forward(&mut tape, t.z_graph, &model.student)?;
    let terms = loss_total(
        &mut tape,
        &LossInputs {
            views,
            teacher: &model.teacher,
            teacher_out: &t,
            student_out: &s,
            critics: &model.critics,
            kappa,
            weights: w,
            phase: kind,
        },
    )?;
    if let Some(term) = terms.first_non_finite(&tape) {
        return Err(Error::NonFinite { term: term.into() });
    }
    let values = terms.values(&tape);
    tape.backward(terms.total)?;

    if !model.teacher.frozen {
        model.teacher.backbone.accumulate(&tape);
        opt.backbone.step(&mut model.teacher.backbone)?;
        model.teacher.backbone.zero_grad();
    }
    for (d, head) in model.teacher.heads.iter_mut() {
        if head.frozen {
            continue;
        }
        head.store.accumulate(&tape);
        if head.store.any_grad() {
            let o = opt.heads.entry(*d).or_insert_with(|| Adam::new(&head.store, opt.backbone.lr));
            o.step(&mut head.store)?;
            head.store.zero_grad();
        }
    }
    model.student.store.accumulate(&tape);
    opt.student.step(&mut model.student.store)?;
    model.student.store.zero_grad();

    let y = &views.base.labels;
    let z_vs = tape.value(s.z_vs).clone();
    let z_vr = tape.value(s.z_vr).clone();
    let z_g = tape.value(t.z_graph).clone();
    model.student.vr_classifier.fit_step(&z_vr, y)?;
    model.critics.vs_vr.fit_step(&z_vs, &z_vr)?;
    model.critics.vs_teacher.fit_step(&z_vs, &z_g)?;
    let vg = tape.value(t.view_graph);
    for (c, critic) in model.critics.views.iter_mut().enumerate() {
        let rows: Vec<usize> = (0..t.view_labels.len()).filter(|&r| t.view_labels[r] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let ids: Vec<usize> = rows.iter().map(|&r| t.view_ids[r]).collect();
        critic.fit_step(&vg.select_rows(&rows), &ids)?;
    }
    Ok(values)
}
