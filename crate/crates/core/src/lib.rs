//! Post-hoc hallucination verification for retrieval-augmented generation.
//!
//! The pipeline scores windowed premise/hypothesis pairs with two frozen NLI
//! backends, pools the class distributions, adds lexical overlap statistics,
//! and trains a small linear meta-classifier under an out-of-fold protocol.
//! Out-of-fold scores are calibrated (Platt or isotonic), a decision threshold
//! is chosen to maximise F1 subject to a precision floor, and an optional
//! coverage target enables abstention on the least confident examples.
//!
//! Module map:
//!
//! - [`corpus`]: datasets, the synthetic planted corpus and feature-matrix files.
//! - [`features`]: tokenisation, windowing, pooling, lexical features and masks.
//! - [`nli_backend`]: the scoring contract, score files and the synthetic scorer.
//! - [`models`]: logistic regression and squared-hinge linear SVC.
//! - [`calibration`]: Platt scaling, isotonic regression and ECE.
//! - [`oof`]: K-fold assignment and out-of-fold training.
//! - [`policy`]: thresholding, curves and selective prediction.

pub mod calibration;
pub mod corpus;
pub mod error;
pub mod features;
pub mod models;
pub mod nli_backend;
pub mod oof;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
