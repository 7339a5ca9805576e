//! Teacher encoder/decoder, student heads and the critics trained alongside.

mod checkpoint;
mod student;
mod teacher;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use student::{student_forward, StudentModel, StudentOutput};
pub use teacher::{gcn_layer, teacher_forward, teacher_reconstruct, DatasetHead, Mode, TeacherModel, TeacherOutput};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::mi::{CategoricalCritic, GaussianCritic};
use crate::rng::{rng_for, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
    Max,
}

/// Architecture shared by a checkpoint and the run that loads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_views: usize,
    pub num_classes: usize,
    pub adapter_width: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub proj_dim: usize,
    pub critic_hidden: usize,
    pub pooling: Pooling,
}

impl ModelConfig {
    pub fn new(num_views: usize, num_classes: usize) -> Self {
        Self {
            num_views,
            num_classes,
            adapter_width: 32,
            hidden: 64,
            gcn_layers: 3,
            proj_dim: 32,
            critic_hidden: 64,
            pooling: Pooling::Mean,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Critics fitted by maximum likelihood alongside the main objective.
#[derive(Clone, Debug)]
pub struct Critics {
    /// `q(z_vr | z_vs)`.
    pub vs_vr: GaussianCritic,
    /// `q(Z_g | z_vs)`.
    pub vs_teacher: GaussianCritic,
    /// Per class, `q(view | per-view graph encoding)`.
    pub views: Vec<CategoricalCritic>,
}

impl Critics {
    pub fn new(cfg: &ModelConfig, lr: f64, rng: &mut Rng) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            vs_vr: GaussianCritic::new("critic.vs_vr", h, cfg.critic_hidden, h, lr, rng)?,
            vs_teacher: GaussianCritic::new("critic.vs_teacher", h, cfg.critic_hidden, h, lr, rng)?,
            views: (0..cfg.num_classes)
                .map(|c| CategoricalCritic::new(&format!("critic.view{c}"), &[h, cfg.num_views], lr, rng))
                .collect::<Result<_>>()?,
        })
    }
}

/// Teacher, student and critics.
#[derive(Clone, Debug)]
pub struct DibodModel {
    pub cfg: ModelConfig,
    pub teacher: TeacherModel,
    pub student: StudentModel,
    pub critics: Critics,
}

impl DibodModel {
    /// Fresh model with a dataset head for input width `feature_dim`.
    pub fn new(cfg: ModelConfig, feature_dim: usize, critic_lr: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[0x0de1]);
        let mut teacher = TeacherModel::new(cfg.clone(), &mut rng)?;
        teacher.ensure_head(feature_dim, &mut rng)?;
        let student = StudentModel::new(&cfg, critic_lr, &mut rng)?;
        let critics = Critics::new(&cfg, critic_lr, &mut rng)?;
        Ok(Self {
            cfg,
            teacher,
            student,
            critics,
        })
    }
}
