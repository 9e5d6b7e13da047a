//! Synthetic data: planted-signal procedure corpora and random graphs.

mod corpus;
mod random;

pub use corpus::{
    generate_corpus, Corpus, DatagenError, GeneratorConfig, Manifest, PlantedProcedure,
    HIGH_CENTER, LOW_CENTER,
};
pub use random::{random_features, random_graph, random_snapshot, snapshot_from, RandomGraphSpec};
