//! Strategy prediction for tutoring interaction logs.
//!
//! The pipeline ingests student/problem/knowledge-component interaction
//! records and predicts the strategy (ordered KC sequence) a student will
//! use on a problem:
//!
//! 1. [`corpus`] — ingestion, strategy extraction, the tripartite
//!    student–KC–problem graph, and a synthetic benchmark generator.
//! 2. [`mastery`] — a small encoder-decoder attention network trained to
//!    predict correct-first-attempt outcomes; per-KC mastery scores are
//!    distilled from its encoder-decoder attention.
//! 3. [`embed`] — mastery-weighted ⟨student, KC, problem⟩ walks and
//!    skip-gram node embeddings learned from them.
//! 4. [`symmetry`] — approximate strategy symmetry via positional
//!    embeddings and zero-gap local alignment.
//! 5. [`cluster`] — joint nonparametric clustering of students and
//!    problems with coarse-to-fine refinement of the global penalty.
//! 6. [`predict`] — cluster-aware training-set sampling, the recurrent
//!    strategy predictor, and accuracy/fairness evaluation.
//!
//! Shared numeric machinery (tape autodiff, Adam, checkpoints) lives in
//! [`nn`]; seeded RNG stream derivation in [`rng`].

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod mastery;
pub mod nn;
pub mod predict;
pub mod rng;
pub mod symmetry;

pub use corpus::{Corpus, InteractionRecord, Instance, Strategy, Vocabulary};
// re-exports restored as modules land

