//! End-to-end glue: records → fitted preprocessing → graph samples →
//! trained checkpoints and procedure-level predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BehaviorError, ClassCentroids, DichotomizationThresholds};
use crate::features::{ActionVocabulary, FeatureNormalizer};
use crate::graph::{
    build_snapshots, slide_samples, GraphError, SnapshotGraph, TimeExpandedGraph, SAMPLE_WINDOWS,
};
use crate::ingest::{window_procedure_with, ProcedureRecord, WindowConfig};
use crate::model::{
    argmax, train, Batch, DurationBoundaries, DurationClass, ModelCheckpoint, ModelError,
    ModelKind, PreparedGraph, Preprocessing, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no training records")]
    NoTrainingData,
}

/// How graph samples are cut from a procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub stride: usize,
    pub span: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            stride: 4,
            span: SAMPLE_WINDOWS,
        }
    }
}

/// Fits vocabulary, normalizer, thresholds, centroids and duration
/// boundaries on training records only.
pub fn fit_preprocessing(
    records: &[&ProcedureRecord],
    window: WindowConfig,
) -> Result<Preprocessing, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::NoTrainingData);
    }
    let vocabulary = ActionVocabulary::fit(records.iter().copied());
    let snapshots: Vec<SnapshotGraph> = records
        .iter()
        .flat_map(|r| build_snapshots(&window_procedure_with(r, &window), &vocabulary))
        .collect();
    let nodes: Vec<_> = snapshots
        .iter()
        .flat_map(|s| s.nodes.iter().map(|n| &n.features))
        .collect();
    let normalizer = FeatureNormalizer::fit(nodes.iter().copied());
    let thresholds = DichotomizationThresholds::fit(nodes.iter().copied())?;
    let centroids = ClassCentroids::fit(nodes.iter().copied(), &thresholds, &normalizer)?;
    let durations: Vec<f64> = records.iter().map(|r| r.duration).collect();
    Ok(Preprocessing {
        window,
        vocabulary,
        normalizer,
        thresholds,
        centroids,
        boundaries: DurationBoundaries::fit(&durations).expect("non-empty"),
    })
}

pub fn procedure_snapshots(record: &ProcedureRecord, pre: &Preprocessing) -> Vec<SnapshotGraph> {
    build_snapshots(&window_procedure_with(record, &pre.window), &pre.vocabulary)
}

/// Sliding samples of one procedure, labelled with `label`.
pub fn procedure_samples(
    record: &ProcedureRecord,
    pre: &Preprocessing,
    sampling: Sampling,
    label: Option<DurationClass>,
) -> Result<Vec<TimeExpandedGraph>, PipelineError> {
    let snapshots = procedure_snapshots(record, pre);
    Ok(slide_samples(
        &record.procedure_id,
        &snapshots,
        sampling.stride,
        sampling.span,
        label,
    )?)
}

/// Samples of every record labelled by the fitted duration boundaries.
pub fn labelled_samples(
    records: &[&ProcedureRecord],
    pre: &Preprocessing,
    sampling: Sampling,
) -> Result<Vec<TimeExpandedGraph>, PipelineError> {
    let mut out = Vec::new();
    for r in records {
        let label = pre.boundaries.classify(r.duration);
        out.extend(procedure_samples(r, pre, sampling, Some(label))?);
    }
    Ok(out)
}

/// Converts graphs into cached model inputs under fitted preprocessing.
pub fn prepare(
    graphs: &[TimeExpandedGraph],
    pre: &Preprocessing,
    kind: ModelKind,
) -> Result<Vec<PreparedGraph>, PipelineError> {
    let width = pre.vocabulary.feature_width();
    graphs
        .iter()
        .map(|g| PreparedGraph::new(g, &pre.normalizer, width, kind).map_err(PipelineError::from))
        .collect()
}

/// Fits preprocessing on `train_records`, trains a model and bundles both
/// into a checkpoint. `validation_records` (may be empty) drive early
/// stopping.
pub fn train_checkpoint(
    train_records: &[&ProcedureRecord],
    validation_records: &[&ProcedureRecord],
    config: &TrainConfig,
    window: WindowConfig,
    sampling: Sampling,
) -> Result<(ModelCheckpoint, TrainReport), PipelineError> {
    let pre = fit_preprocessing(train_records, window)?;
    let train_graphs = labelled_samples(train_records, &pre, sampling)?;
    let train_prepared = prepare(&train_graphs, &pre, config.kind)?;
    let validation = if validation_records.is_empty() {
        None
    } else {
        let v = labelled_samples(validation_records, &pre, sampling)?;
        Some(prepare(&v, &pre, config.kind)?)
    };
    let (params, report) = train(&train_prepared, validation.as_deref(), config)?;
    Ok((
        ModelCheckpoint {
            params,
            preprocessing: pre,
            config: config.clone(),
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProbability {
    pub window_range: (usize, usize),
    pub probabilities: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedurePrediction {
    pub class: DurationClass,
    /// Mean of the per-sample probabilities.
    pub probabilities: [f64; 3],
    pub trace: Vec<SampleProbability>,
}

/// Class probabilities of many graphs in one batched pass.
pub fn predict_graphs(
    graphs: &[TimeExpandedGraph],
    checkpoint: &ModelCheckpoint,
) -> Result<Vec<[f64; 3]>, PipelineError> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&TimeExpandedGraph> = graphs.iter().collect();
    let batch = Batch::new(
        &refs,
        &checkpoint.preprocessing.normalizer,
        checkpoint.params.input_width(),
        checkpoint.kind(),
    )?;
    let p = checkpoint.params.predict_batch(&batch)?;
    Ok((0..graphs.len())
        .map(|i| [p.get(i, 0), p.get(i, 1), p.get(i, 2)])
        .collect())
}

/// Averages sample probabilities over sliding samples of the given snapshots.
pub fn predict_snapshots(
    procedure_id: &str,
    snapshots: &[SnapshotGraph],
    checkpoint: &ModelCheckpoint,
    stride: usize,
) -> Result<ProcedurePrediction, PipelineError> {
    if snapshots.is_empty() {
        return Err(ModelError::TooShort.into());
    }
    let samples = slide_samples(procedure_id, snapshots, stride, SAMPLE_WINDOWS, None)?;
    let probs = predict_graphs(&samples, checkpoint)?;
    let mut mean = [0.0; 3];
    for p in &probs {
        for c in 0..3 {
            mean[c] += p[c] / probs.len() as f64;
        }
    }
    Ok(ProcedurePrediction {
        class: DurationClass::from_index(argmax(&mean)).expect("three classes"),
        probabilities: mean,
        trace: samples
            .iter()
            .zip(probs)
            .map(|(g, probabilities)| SampleProbability {
                window_range: g.window_range,
                probabilities,
            })
            .collect(),
    })
}

/// Procedure-level prediction from sliding samples.
pub fn predict_procedure(
    record: &ProcedureRecord,
    checkpoint: &ModelCheckpoint,
    stride: usize,
) -> Result<ProcedurePrediction, PipelineError> {
    let snapshots = procedure_snapshots(record, &checkpoint.preprocessing);
    predict_snapshots(&record.procedure_id, &snapshots, checkpoint, stride)
}
