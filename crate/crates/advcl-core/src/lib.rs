//! Robustness-oriented text classification toolkit.
//!
//! The pipeline: contrastively pretrain a small transformer encoder whose
//! positive views are produced by a gradient-guided synonym-substitution
//! attack, fine-tune it for classification, then measure how well the result
//! stands up to the same attack at evaluation time.
//!
//! Modules build bottom-up: [`corpus`] handles text and tokenization,
//! [`nn`] the network layers, [`encoder`] the two-branch model,
//! [`moco`] the momentum-contrast machinery, [`attack`] the substitution
//! search, [`pipelines`] training loops, and [`evalsuite`] reporting.

pub mod attack;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod moco;
pub mod nn;
pub mod pipelines;
pub mod rng;

pub use error::{Error, Result};
