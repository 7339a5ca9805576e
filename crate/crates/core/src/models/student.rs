use super::ModelConfig;
use crate::error::Result;
use crate::mi::CategoricalCritic;
use crate::nn::{Linear, Mlp};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Invariant and redundant heads over the pooled teacher embedding.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub store: ParamStore,
    vs_head: Mlp,
    vr_head: Mlp,
    vs_classifier: Linear,
    proj_vs: Linear,
    proj_vr: Linear,
    proj_teacher: Linear,
    /// Linear `q(y | z_vr)`, fitted only by its own likelihood steps.
    pub vr_classifier: CategoricalCritic,
}

#[derive(Clone, Debug)]
pub struct StudentOutput {
    pub z_vs: Var,
    pub z_vr: Var,
    pub logits_vs: Var,
    /// Floored log-probabilities of `q(y | z_vr)`, not raw logits.
    pub logits_vr: Var,
    pub proj_vs: Var,
    pub proj_vr: Var,
    pub proj_teacher: Var,
}

impl StudentModel {
    pub fn new(cfg: &ModelConfig, critic_lr: f64, rng: &mut Rng) -> Result<Self> {
        let h = cfg.hidden;
        let mut s = ParamStore::new();
        let vs_head = Mlp::new(&mut s, "student.vs", &[h, h, h], rng)?;
        let vr_head = Mlp::new(&mut s, "student.vr", &[h, h, h], rng)?;
        let vs_classifier = Linear::new(&mut s, "student.vs_classifier", h, cfg.num_classes, true, rng)?;
        let proj_vs = Linear::new(&mut s, "student.proj_vs", h, cfg.proj_dim, true, rng)?;
        let proj_vr = Linear::new(&mut s, "student.proj_vr", h, cfg.proj_dim, true, rng)?;
        let proj_teacher = Linear::new(&mut s, "student.proj_teacher", h, cfg.proj_dim, true, rng)?;
        let vr_classifier = CategoricalCritic::new("student.vr_classifier", &[h, cfg.num_classes], critic_lr, rng)?;
        Ok(Self {
            store: s,
            vs_head,
            vr_head,
            vs_classifier,
            proj_vs,
            proj_vr,
            proj_teacher,
            vr_classifier,
        })
    }

    pub fn vs_head(&self) -> &Mlp {
        &self.vs_head
    }

    pub fn vr_head(&self) -> &Mlp {
        &self.vr_head
    }
}

/// Feed-forward pass of every student head on `z_graph`.
pub fn student_forward(tape: &mut Tape, z_graph: Var, model: &StudentModel) -> Result<StudentOutput> {
    let s = &model.store;
    let z_vs = model.vs_head.forward(s, tape, z_graph, true)?;
    let z_vr = model.vr_head.forward(s, tape, z_graph, true)?;
    let logits_vs = model.vs_classifier.forward(s, tape, z_vs, true)?;
    let vr_lq = model.vr_classifier.log_probs(tape, z_vr, false)?;
    let proj_vs = model.proj_vs.forward(s, tape, z_vs, true)?;
    let proj_vr = model.proj_vr.forward(s, tape, z_vr, true)?;
    let proj_teacher = model.proj_teacher.forward(s, tape, z_graph, true)?;
    Ok(StudentOutput {
        z_vs,
        z_vr,
        logits_vs,
        logits_vr: vr_lq,
        proj_vs,
        proj_vr,
        proj_teacher,
    })
}
