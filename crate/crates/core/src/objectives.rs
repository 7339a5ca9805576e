//! Loss assembly: teacher and student bottlenecks, contrastive distillation,
//! orthogonality and the weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsic::{hsic, KernelSpec};
use crate::mi::{ba_from_log_q, club_from_log_q, conditional_club_view, empirical_entropy, label_log_likelihood, PROB_FLOOR};
use crate::models::{teacher_reconstruct, Critics, StudentOutput, TeacherModel, TeacherOutput};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::views::ViewSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub beta_t: f64,
    pub beta_y: f64,
    pub beta_vs: f64,
    pub lambda_orth: f64,
    pub lambda_ib: f64,
    pub lambda_r: f64,
    pub lambda_kd: f64,
    pub tau: f64,
    /// Weight of the view-redundancy term inside the teacher bottleneck; off
    /// by default.
    pub lambda_view: f64,
    /// Includes the `z_vs` to teacher-embedding term of the student bottleneck.
    pub student_teacher_term: bool,
    pub kernel: KernelSpec,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_t: 0.1,
            beta_y: 0.05,
            beta_vs: 0.05,
            lambda_orth: 0.05,
            lambda_ib: 0.01,
            lambda_r: 0.001,
            lambda_kd: 0.01,
            tau: 0.5,
            lambda_view: 0.0,
            student_teacher_term: true,
            kernel: KernelSpec::default(),
        }
    }
}

impl LossWeights {
    /// Every weight zero: the total reduces to the task loss.
    pub fn zeros() -> Self {
        Self {
            beta_t: 0.0,
            beta_y: 0.0,
            beta_vs: 0.0,
            lambda_orth: 0.0,
            lambda_ib: 0.0,
            lambda_r: 0.0,
            lambda_kd: 0.0,
            lambda_view: 0.0,
            student_teacher_term: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("beta_t", self.beta_t),
            ("beta_y", self.beta_y),
            ("beta_vs", self.beta_vs),
            ("lambda_orth", self.lambda_orth),
            ("lambda_ib", self.lambda_ib),
            ("lambda_r", self.lambda_r),
            ("lambda_kd", self.lambda_kd),
            ("lambda_view", self.lambda_view),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("weights.{name}"), format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("weights.tau", format!("{} must be > 0", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoIb,
    NoHsic,
    NoSsr,
    FullFinetune,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoIb,
        Ablation::NoHsic,
        Ablation::NoSsr,
        Ablation::FullFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoIb => "no-ib",
            Ablation::NoHsic => "no-hsic",
            Ablation::NoSsr => "no-ssr",
            Ablation::FullFinetune => "full-finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("ablation", format!("unknown ablation `{s}`")))
    }

    /// Weight changes implied by the flag.
    pub fn apply(self, w: &LossWeights) -> LossWeights {
        let mut w = w.clone();
        match self {
            Ablation::NoIb => {
                w.beta_t = 0.0;
                w.beta_vs = 0.0;
            }
            Ablation::NoHsic => w.lambda_orth = 0.0,
            Ablation::None | Ablation::NoSsr | Ablation::FullFinetune => {}
        }
        w
    }

    /// Whether pretraining under this flag differs from the unablated one.
    pub fn changes_pretraining(self) -> bool {
        matches!(self, Ablation::NoIb | Ablation::NoHsic)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Pretrain,
    Adapt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaSource {
    Uniform,
    Ssr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPhase {
    pub kind: PhaseKind,
    pub teacher_frozen: bool,
    pub epochs: usize,
    pub kappa: KappaSource,
    /// Recompute the regularizer state before every adaptation epoch.
    pub recompute_ssr: bool,
}

impl TrainPhase {
    pub fn pretrain(epochs: usize) -> Self {
        Self {
            kind: PhaseKind::Pretrain,
            teacher_frozen: false,
            epochs,
            kappa: KappaSource::Uniform,
            recompute_ssr: false,
        }
    }

    pub fn adapt(epochs: usize) -> Self {
        Self {
            kind: PhaseKind::Adapt,
            teacher_frozen: true,
            epochs,
            kappa: KappaSource::Ssr,
            recompute_ssr: false,
        }
    }

    /// Adaptation phase under an ablation flag.
    pub fn adapt_with(epochs: usize, ablation: Ablation) -> Self {
        let mut p = Self::adapt(epochs);
        match ablation {
            Ablation::NoSsr => p.kappa = KappaSource::Uniform,
            Ablation::FullFinetune => p.teacher_frozen = false,
            _ => {}
        }
        p
    }
}

/// Row-wise `log softmax`, floored like the critics.
pub fn log_probs(tape: &mut Tape, logits: Var) -> Var {
    let lq = tape.log_softmax_rows(logits);
    tape.clamp_min(lq, PROB_FLOOR.ln())
}

#[derive(Clone, Copy, Debug)]
pub struct IbtTerms {
    pub total: Var,
    pub ba: Var,
    pub kl: Var,
    pub view: Option<Var>,
}

/// `-BA(Z_g; Y) + beta_t * KL [+ lambda_view * I(view encodings; view | Y)]`.
/// The classifier head serves as the lower-bound critic.
pub fn loss_ibt(tape: &mut Tape, t: &TeacherOutput, y: &[usize], critics: &Critics, w: &LossWeights) -> Result<IbtTerms> {
    let lq = log_probs(tape, t.logits);
    let ba = ba_from_log_q(tape, lq, y)?;
    let neg = tape.neg(ba);
    let comp = tape.scale(t.kl, w.beta_t);
    let mut total = tape.add(neg, comp)?;
    let mut view = None;
    if w.lambda_view > 0.0 {
        let v = conditional_club_view(tape, t.view_graph, &t.view_ids, &t.view_labels, &critics.views)?;
        let s = tape.scale(v, w.lambda_view);
        total = tape.add(total, s)?;
        view = Some(v);
    }
    Ok(IbtTerms {
        total,
        ba,
        kl: t.kl,
        view,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct IbsTerms {
    pub total: Var,
    /// `-mean(kappa * log q(y|z_vs)) - H(Y) mean(kappa)`.
    pub weighted_ba: Var,
    pub club_vr_y: Var,
    pub club_vs_vr: Var,
    pub club_vs_teacher: Option<Var>,
}

pub fn loss_ibs(
    tape: &mut Tape,
    s: &StudentOutput,
    z_graph: Var,
    y: &[usize],
    kappa: &[f64],
    critics: &Critics,
    w: &LossWeights,
) -> Result<IbsTerms> {
    if kappa.len() != y.len() {
        return Err(Error::shape("kappa must align with the batch"));
    }
    let m = tape.value(s.logits_vs).cols();
    let lq = log_probs(tape, s.logits_vs);
    let ll = label_log_likelihood(tape, lq, y)?;
    let k = tape.constant(Tensor::column(kappa.to_vec()));
    let kll = tape.mul(ll, k)?;
    let mean_kll = tape.mean(kll);
    let mean_kappa = kappa.iter().sum::<f64>() / kappa.len() as f64;
    let neg = tape.neg(mean_kll);
    let weighted_ba = tape.add_scalar(neg, -empirical_entropy(y, m) * mean_kappa);

    let club_vr_y = club_from_log_q(tape, s.logits_vr, y)?;
    let club_vs_vr = critics.vs_vr.club(tape, s.z_vs, s.z_vr)?;
    let a = tape.relu(club_vr_y);
    let a = tape.scale(a, w.beta_y);
    let b = tape.relu(club_vs_vr);
    let b = tape.scale(b, w.beta_vs);
    let mut total = tape.add(weighted_ba, a)?;
    total = tape.add(total, b)?;
    let mut club_vs_teacher = None;
    if w.student_teacher_term {
        let target = tape.constant(tape.value(z_graph).clone());
        let c = critics.vs_teacher.club(tape, s.z_vs, target)?;
        let floored = tape.relu(c);
        total = tape.add(total, floored)?;
        club_vs_teacher = Some(c);
    }
    Ok(IbsTerms {
        total,
        weighted_ba,
        club_vr_y,
        club_vs_vr,
        club_vs_teacher,
    })
}

/// Rows scaled to unit Euclidean norm.
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let sq = tape.square(x);
    let s = tape.sum_rows(sq);
    let s = tape.add_scalar(s, 1e-12);
    let norm = tape.sqrt(s)?;
    tape.div(x, norm)
}

/// Symmetric InfoNCE between student and teacher projections: cosine
/// similarities over `tau`, positives on the diagonal, averaged over both
/// matching directions.
pub fn info_nce(tape: &mut Tape, student: Var, teacher: Var, tau: f64) -> Result<Var> {
    let n = tape.value(student).rows();
    if n < 2 {
        return Err(Error::contract("contrastive loss needs at least 2 samples"));
    }
    if tape.value(teacher).rows() != n {
        return Err(Error::shape("student and teacher projections differ in count"));
    }
    let s = normalize_rows(tape, student)?;
    let t = normalize_rows(tape, teacher)?;
    let tt = tape.transpose(t);
    let sim = tape.matmul(s, tt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let eye = Tensor::identity(n);
    let a = tape.softmax_cross_entropy_rows(logits, &eye)?;
    let lt = tape.transpose(logits);
    let b = tape.softmax_cross_entropy_rows(lt, &eye)?;
    let a = tape.mean(a);
    let b = tape.mean(b);
    let sum = tape.add(a, b)?;
    Ok(tape.scale(sum, 0.5))
}

pub fn loss_ckd(tape: &mut Tape, proj_vs: Var, proj_vr: Var, proj_teacher: Var, tau: f64) -> Result<Var> {
    let a = info_nce(tape, proj_vs, proj_teacher, tau)?;
    let b = info_nce(tape, proj_vr, proj_teacher, tau)?;
    tape.add(a, b)
}

/// Scalar values of every logged term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub task: f64,
    pub ibt: f64,
    pub ibs: f64,
    pub recon: f64,
    pub ckd: f64,
    pub orth: f64,
    pub total: f64,
}

impl LossValues {
    /// Recombines the logged terms under `w`.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.task
            + w.lambda_ib * (self.ibt + self.ibs)
            + w.lambda_r * self.recon
            + w.lambda_kd * (self.ckd + w.lambda_orth * self.orth)
    }

    pub fn names() -> [&'static str; 7] {
        ["task", "ibt", "ibs", "recon", "ckd", "orth", "total"]
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.task, self.ibt, self.ibs, self.recon, self.ckd, self.orth, self.total]
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub task: Var,
    pub ibt: IbtTerms,
    pub ibs: IbsTerms,
    pub recon: Var,
    pub ckd: Var,
    pub orth: Var,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            task: tape.scalar(self.task),
            ibt: tape.scalar(self.ibt.total),
            ibs: tape.scalar(self.ibs.total),
            recon: tape.scalar(self.recon),
            ckd: tape.scalar(self.ckd),
            orth: tape.scalar(self.orth),
            total: tape.scalar(self.total),
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self, tape: &Tape) -> Option<&'static str> {
        let v = self.values(tape);
        LossValues::names()
            .into_iter()
            .zip(v.as_array())
            .find(|(_, x)| !x.is_finite())
            .map(|(n, _)| n)
    }
}

pub struct LossInputs<'a> {
    pub views: &'a ViewSet,
    pub teacher: &'a TeacherModel,
    pub teacher_out: &'a TeacherOutput,
    pub student_out: &'a StudentOutput,
    pub critics: &'a Critics,
    pub kappa: &'a [f64],
    pub weights: &'a LossWeights,
    pub phase: PhaseKind,
}

/// `L_task + lambda_ib (L_ibt + L_ibs) + lambda_r L_r + lambda_kd (L_ckd + lambda_orth L_orth)`.
pub fn loss_total(tape: &mut Tape, x: &LossInputs<'_>) -> Result<LossTerms> {
    let w = x.weights;
    let y = &x.views.base.labels;
    let m = tape.value(x.teacher_out.logits).cols();
    let task_logits = match x.phase {
        PhaseKind::Pretrain => x.teacher_out.logits,
        PhaseKind::Adapt => x.student_out.logits_vs,
    };
    let ce = tape.softmax_cross_entropy_rows(task_logits, &Tensor::one_hot(y, m))?;
    let task = tape.mean(ce);
    let ibt = loss_ibt(tape, x.teacher_out, y, x.critics, w)?;
    let ibs = loss_ibs(tape, x.student_out, x.teacher_out.z_graph, y, x.kappa, x.critics, w)?;
    let recon = teacher_reconstruct(tape, x.teacher_out, x.teacher, x.views)?;
    let ckd = loss_ckd(tape, x.student_out.proj_vs, x.student_out.proj_vr, x.student_out.proj_teacher, w.tau)?;
    let orth = hsic_or_zero(tape, x.student_out.z_vs, x.student_out.z_vr, w.kernel)?;

    let ib = tape.add(ibt.total, ibs.total)?;
    let ib = tape.scale(ib, w.lambda_ib);
    let r = tape.scale(recon, w.lambda_r);
    let o = tape.scale(orth, w.lambda_orth);
    let kd = tape.add(ckd, o)?;
    let kd = tape.scale(kd, w.lambda_kd);
    let mut total = tape.add(task, ib)?;
    total = tape.add(total, r)?;
    total = tape.add(total, kd)?;
    Ok(LossTerms {
        total,
        task,
        ibt,
        ibs,
        recon,
        ckd,
        orth,
    })
}

fn rows_identical(t: &Tensor) -> bool {
    (1..t.rows()).all(|i| t.row(i) == t.row(0))
}

/// HSIC, or an exact zero when either input has identical rows (its centered
/// kernel vanishes under every bandwidth).
pub fn hsic_or_zero(tape: &mut Tape, a: Var, b: Var, spec: KernelSpec) -> Result<Var> {
    if rows_identical(tape.value(a)) || rows_identical(tape.value(b)) {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    hsic(tape, a, b, spec)
}
