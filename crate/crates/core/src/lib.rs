//! Relation extraction over dependency-pruned sentences.
//!
//! The pipeline reads instances and CoNLL-U parses, prunes every sentence to
//! the subtree rooted at the parent of the entities' lowest common ancestor,
//! encodes the kept tokens with a bidirectional GRU, pools them with
//! entity-wise plus word-level attention, aggregates bags with selective
//! sentence attention and classifies. Shared encoder parameters can be
//! pretrained on entity-type classification and transferred into the
//! relation extractor. A held-out evaluator produces PR curves and P@N.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the 64-bit precision used by the training tools.

pub mod attention;
pub mod corpus;
pub mod deptree;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense row-major tensor in 64-bit precision.
pub type Tensor64 = numerics::Tensor<f64>;
/// Dense row-major tensor in 32-bit precision.
pub type Tensor32 = numerics::Tensor<f32>;
/// Parameter store in 64-bit precision.
pub type Store64 = numerics::ParameterStore<f64>;
/// Parameter store in 32-bit precision.
pub type Store32 = numerics::ParameterStore<f32>;
/// Reverse-mode tape in 64-bit precision.
pub type Tape64<'s> = numerics::Tape<'s, f64>;
/// The relation extractor in 64-bit precision.
pub type Extractor64 = model::Extractor<f64>;
/// The relation extractor in 32-bit precision.
pub type Extractor32 = model::Extractor<f32>;
