//! Desk-scale laboratory for the one-epoch overfitting phenomenon in
//! ID-embedding training, and the two-stage remedy: contrastive pre-training
//! of ID embeddings in a minimal dot-product model, followed by multi-epoch
//! fine-tuning inside a downstream CTR model.

pub mod cli;
pub mod core_types;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod loss_grad;
pub mod mat;
pub mod models;
pub mod optimizers;
pub mod persistence;
pub mod pipeline;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
