//! Decoupled information-bottleneck graph pretraining with online distillation.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`sparse`], [`tape`], [`params`], [`optim`]: dense tensors with
//!   reverse-mode autodiff and Adam.
//! - [`graph`]: TUDataset parsing/writing, synthetic motif corpora, stratified folds.
//! - [`views`]: stochastic graph augmentations.
//! - [`models`]: GCN teacher (multi-view encoder, stochastic head, decoders) and
//!   the invariant/redundant student heads.
//! - [`mi`], [`hsic`], [`ssr`]: variational MI bounds, HSIC, and the
//!   self-adaptive semantic regularizer.
//! - [`objectives`], [`training`]: loss assembly and the pretrain/adapt loops.
//! - [`theory`]: exact discrete-probability oracles.
//! - [`harness`]: configuration and experiment orchestration used by the CLI.

pub mod error;
pub mod par;
pub mod rng;
pub mod sparse;
pub mod tape;
pub mod tensor;
pub mod params;
pub mod optim;
pub mod graph;
pub mod batch;
pub mod views;
pub mod nn;
pub mod mi;
pub mod models;
pub mod hsic;
pub mod ssr;
pub mod objectives;
pub mod training;
pub mod theory;
pub mod harness;

pub use error::{Error, Result};
