//! Multi-resolution interest fusion (MRIF) sequential recommender.
//!
//! The pipeline, end to end:
//!
//! 1. [`data`] ingests raw interaction logs, applies k-core filtering, and
//!    builds leave-one-out train/eval splits with sampled negatives.
//! 2. [`model`] turns an item sequence into a stack of interest sequences —
//!    a causal transformer extracts per-step interests, sliding-window
//!    aggregation layers re-summarize them at coarser temporal resolutions,
//!    and target-conditioned attention fuses the stack into one vector used
//!    to score candidate items.
//! 3. [`train`] runs two phases: next-item pre-training of the extractor,
//!    then full-model training under a paired binary cross-entropy loss.
//! 4. [`eval`] ranks each user's held-out item against sampled negatives and
//!    reports AUC, GAUC, HR@k, NDCG@k, and MRR.
//!
//! Everything differentiable runs on the [`tensor`] tape, a minimal dense
//! `f64` autodiff library. [`gradcheck`] provides the finite-difference
//! oracle used throughout the test suites.

pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod train;

pub use data::{InteractionLog, SequenceDataset};
pub use eval::EvalReport;
pub use model::{AggregatorKind, ModelConfig, MrifModel};
pub use tensor::{Graph, Mode, Tensor, TensorId};
pub use train::TrainConfig;
