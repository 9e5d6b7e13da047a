//! Time-expanded team interaction graphs for procedure-duration prediction.
//!
//! The pipeline runs `ingest` → `features` → `graph` → `model`, with
//! `behavior` providing the discrete paralinguistic classes used by the
//! `counterfactual` engine. `datagen` produces synthetic corpora in the
//! ingestion format and `eval` runs leave-one-team-out benchmarks.

pub mod behavior;
pub mod counterfactual;
pub mod datagen;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod tensor;
