#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tegraph::behavior::{ClassCentroids, DichotomizationThresholds};
use tegraph::datagen::{random_graph, RandomGraphSpec};
use tegraph::features::{ActionVocabulary, FeatureNormalizer};
use tegraph::graph::TimeExpandedGraph;
use tegraph::ingest::WindowConfig;
use tegraph::model::{
    DurationBoundaries, ModelCheckpoint, ModelKind, ModelParams, Preprocessing, TrainConfig,
};

pub const SLOTS: usize = 4;

pub fn vocab() -> ActionVocabulary {
    ActionVocabulary::new(vec![
        ("cut".into(), "tissue".into()),
        ("hold".into(), "retractor".into()),
        ("pass".into(), "scalpel".into()),
    ])
}

pub fn spec(members: usize, windows: usize) -> RandomGraphSpec {
    RandomGraphSpec {
        members,
        windows,
        presence: 0.9,
        speech: 0.45,
        action_slots: SLOTS,
    }
}

pub fn random_graphs(seed: u64, count: usize, spec: RandomGraphSpec) -> Vec<TimeExpandedGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_graph(&mut rng, &spec)).collect()
}

/// Preprocessing fitted on a pool of random graphs.
pub fn preprocessing(seed: u64) -> Preprocessing {
    let pool = random_graphs(seed, 40, spec(6, 12));
    let nodes: Vec<_> = pool.iter().flat_map(|g| &g.features).collect();
    let normalizer = FeatureNormalizer::fit(nodes.iter().copied());
    let thresholds = DichotomizationThresholds::fit(nodes.iter().copied()).unwrap();
    let centroids = ClassCentroids::fit(nodes.iter().copied(), &thresholds, &normalizer).unwrap();
    Preprocessing {
        window: WindowConfig::default(),
        vocabulary: vocab(),
        normalizer,
        thresholds,
        centroids,
        boundaries: DurationBoundaries::fit(&[600.0, 700.0, 800.0]).unwrap(),
    }
}

/// Untrained checkpoint with weights scaled by `scale` so that small edits
/// move the prediction.
pub fn random_checkpoint(seed: u64, kind: ModelKind, scale: f64) -> ModelCheckpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = TrainConfig {
        kind,
        hidden: 8,
        depth: 2,
        seed,
        ..TrainConfig::default()
    };
    let mut params = ModelParams::init(
        kind,
        vocab().feature_width(),
        config.hidden,
        config.depth,
        &mut rng,
    );
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    ModelCheckpoint {
        params,
        preprocessing: preprocessing(seed ^ 0x5eed),
        config,
    }
}
