//! Predicate annotation debiasing for scene-graph style relation corpora.
//!
//! The crate is `no_std` (with `alloc`) and carries only the numerical
//! pipeline: domain risk tables and target identification, the invariant
//! contrastive objective with its analytic gradient, loss-variance
//! filtration, prototype-similarity label transfer, recall metrics and a
//! seeded synthetic corpus generator with a brute-force target oracle.
//! File formats and the command line live in the `debias` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
pub mod dataset;
pub mod error;
pub mod filtration;
pub mod linalg;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod representation;
pub mod risk;
pub mod rng;
pub mod synthgen;
pub mod transfer;

pub use config::Hyperparameters;
pub use dataset::{AnnotationSample, Corpus, Domain, FreqTable, Vocab};
pub use error::{DebiasError, Result};
pub use linalg::Matrix;
pub use representation::{BaseEmbeddings, LossReport, PhiTable, ProjectionModel};
pub use risk::{ProbMatrix, RiskTable, TargetEntry, TargetSet};
pub use transfer::{ImportanceVector, SimilarityMatrix, TransferPlan};
