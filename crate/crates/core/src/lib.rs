//! Topic-model training engine for latent Dirichlet allocation.
//!
//! The centerpiece is [`scvb0`], a stochastic collapsed variational Bayes
//! trainer that keeps only expected-count statistics and updates them by
//! online averaging. Around it sit the batch collapsed algorithm it
//! approximates ([`cvb0`]), an unnormalized MAP-EM trainer that optimizes an
//! exact objective ([`map_em`]), a stochastic uncollapsed VB baseline
//! ([`svb`]), held-out evaluation ([`eval`]) and the CLI/benchmark plumbing
//! ([`harness`]).

// `!(x > 0.0)` is how argument checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod cvb0;
pub mod error;
pub mod eval;
pub mod cli;
pub mod harness;
pub mod map_em;
pub mod matrix;
pub mod model;
pub mod progress;
pub mod scvb0;
pub mod snapshot;
pub mod svb;

pub use corpus::{Corpus, Document, Entry, Vocabulary};
pub use error::{Error, ParseError, Result};
pub use matrix::Matrix;
pub use model::{HyperParams, ModelStats, RecoveryMode, Responsibility, TopicModel};
