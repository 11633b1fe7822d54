//! Active learning from individual annotator labels.
//!
//! Most annotation projects collect several (often conflicting) labels per
//! instance and then throw the disagreement away by majority-voting before
//! training. This crate keeps the individual labels: a shared text encoder
//! feeds one small classification head per annotator, the heads vote at
//! prediction time, and the spread of their votes doubles as an uncertainty
//! signal that an active-learning loop can spend its annotation budget on.
//!
//! The pieces, bottom up:
//!
//! * [`numerics`]: deterministic math kernels (softmax, entropy, variance,
//!   Pearson, top-k) and seeded randomness with named substreams.
//! * [`data`]: JSONL ingestion, expansion of records into (instance,
//!   annotator) pairs, majority voting, oversampling, and a synthetic
//!   multi-annotator generator.
//! * [`model`]: the feature-hashing MLP encoder with per-annotator heads,
//!   trained with hand-written gradients and AdamW.
//! * [`acquisition`]: nine acquisition scorers and the batch-selection
//!   policies that turn scores into queries.
//! * [`metrics`]: majority F1, per-annotator F1, and the
//!   uncertainty/disagreement correlation.
//! * [`alloop`]: the round loop: seed set, retrain, evaluate, acquire,
//!   replicate over seeds, and persist CSV/JSON results.

pub mod acquisition;
pub mod alloop;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
