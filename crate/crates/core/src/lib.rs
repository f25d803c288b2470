//! Discourse analytics for labeled two-party conversations.
//!
//! The crate models conversations between a *counselor* and a *texter*,
//! each optionally labeled with an outcome, and provides:
//!
//! - [`corpus`]: ingestion, tokenization, counselor-quality splits,
//!   chunking, situation-setter detection and a synthetic corpus generator.
//! - [`lexicon`]: word-category lexicons, response-class rules and a
//!   negation-aware valence scorer.
//! - [`vectorspace`]: TF-IDF with global IDF, cosine distance,
//!   Jensen-Shannon divergence, radius clustering and templatedness.
//! - [`stages`]: a left-to-right conversation-stage HMM fitted by EM.
//! - [`coordination`]: the "Aggregated 2" linguistic coordination measure.
//! - [`analyses`]: composed reports (adaptability, ambiguity, matched
//!   responses, perspective trajectories, issue breakdowns).
//! - [`predict`]: outcome prediction with regularized logistic regression.
//! - [`stats`]: member bootstrap, Mann-Whitney U, Wilcoxon signed-rank and
//!   paired bootstrap tests.
//!
//! All logarithms are natural logarithms. All randomness is driven by
//! explicit `u64` seeds.

pub mod analyses;
pub mod cli;
pub mod coordination;
pub mod corpus;
pub mod error;
pub mod lexicon;
pub mod predict;
pub mod report;
pub mod stages;
pub mod stats;
pub mod vectorspace;

pub use error::{Error, Result};
