use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DibodModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::NamedTensors;
use crate::rng::rng_for;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub feature_dim: usize,
    pub frozen: bool,
    pub params: NamedTensors,
}

/// Structured-text snapshot of a [`DibodModel`]. Optimizer moments are not
/// stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub fingerprint: String,
    pub config: ModelConfig,
    pub teacher_frozen: bool,
    pub backbone: NamedTensors,
    pub heads: Vec<HeadRecord>,
    pub student: NamedTensors,
    pub vr_classifier: NamedTensors,
    pub critic_vs_vr: NamedTensors,
    pub critic_vs_teacher: NamedTensors,
    pub critic_views: Vec<NamedTensors>,
}

impl Checkpoint {
    pub fn capture(model: &DibodModel) -> Self {
        Self {
            format: FORMAT_VERSION,
            fingerprint: model.cfg.fingerprint(),
            config: model.cfg.clone(),
            teacher_frozen: model.teacher.frozen,
            backbone: model.teacher.backbone.snapshot(),
            heads: model
                .teacher
                .heads
                .iter()
                .map(|(&d, h)| HeadRecord {
                    feature_dim: d,
                    frozen: h.frozen,
                    params: h.store.snapshot(),
                })
                .collect(),
            student: model.student.store.snapshot(),
            vr_classifier: model.student.vr_classifier.store.snapshot(),
            critic_vs_vr: model.critics.vs_vr.store.snapshot(),
            critic_vs_teacher: model.critics.vs_teacher.store.snapshot(),
            critic_views: model.critics.views.iter().map(|c| c.store.snapshot()).collect(),
        }
    }

    /// Rebuilds the model. Fails with [`Error::Fingerprint`] unless the stored
    /// architecture matches `expected`.
    pub fn restore(&self, expected: &ModelConfig, critic_lr: f64) -> Result<DibodModel> {
        if self.format != FORMAT_VERSION {
            return Err(Error::contract(format!("unsupported checkpoint format {}", self.format)));
        }
        let want = expected.fingerprint();
        if self.fingerprint != want || self.config.fingerprint() != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: want,
                found: self.fingerprint.clone(),
            });
        }
        let first = self
            .heads
            .first()
            .ok_or_else(|| Error::contract("checkpoint holds no dataset head"))?;
        let mut model = DibodModel::new(self.config.clone(), first.feature_dim, critic_lr, 0)?;
        let mut rng = rng_for(0, &[0xc4e]);
        model.teacher.backbone.load(&self.backbone)?;
        for h in &self.heads {
            model.teacher.ensure_head(h.feature_dim, &mut rng)?;
            let head = model.teacher.head_mut(h.feature_dim)?;
            head.store.load(&h.params)?;
            head.frozen = h.frozen;
        }
        model.teacher.frozen = self.teacher_frozen;
        model.student.store.load(&self.student)?;
        model.student.vr_classifier.store.load(&self.vr_classifier)?;
        model.critics.vs_vr.store.load(&self.critic_vs_vr)?;
        model.critics.vs_teacher.store.load(&self.critic_vs_teacher)?;
        if self.critic_views.len() != model.critics.views.len() {
            return Err(Error::contract("view critic count mismatch"));
        }
        for (c, snap) in model.critics.views.iter_mut().zip(&self.critic_views) {
            c.store.load(snap)?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &DibodModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::capture(model))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: &ModelConfig, critic_lr: f64) -> Result<DibodModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    ck.restore(expected, critic_lr)
}
