//! Multilingual low-resource neural machine translation.

pub mod batch;
pub mod checkpoint;
pub mod clock;
pub mod corpus;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod subword;
pub mod trainer;
