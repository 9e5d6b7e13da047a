//! Graph classifiers over time-expanded graphs.
//!
//! Three architectures share one batch representation:
//!
//! * [`ModelKind::TeGcn`]: GCN layers over the full time-expanded adjacency
//!   (snapshot and identity edges), mean-pooled over all nodes.
//! * [`ModelKind::SnapshotGcn`]: the same layers with identity edges removed,
//!   pooled per window and then averaged over windows.
//! * [`ModelKind::Mlp`]: mean-pooled node features through a two-layer
//!   perceptron; edges are ignored.
//!
//! Propagation uses `Â = D̃^{-1/2} (A + Aᵀ + I) D̃^{-1/2}` with the
//! symmetrized, self-looped adjacency clipped to 0/1 before normalization.

mod checkpoint;
mod duration;
mod train;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureNormalizer;
use crate::graph::TimeExpandedGraph;
use crate::tensor::{CsrMatrix, Tape, Tensor2, TensorError, Var};

pub use checkpoint::{
    config_digest, ModelCheckpoint, Preprocessing, CHECKPOINT_MAGIC, CHECKPOINT_SCHEMA_VERSION,
};
pub use duration::{DurationBoundaries, DurationClass};
pub use train::{
    class_weights, loss_and_gradients, train, weighted_loss, Adam, TrainConfig, TrainReport,
};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature width {found} does not match model input width {expected}")]
    DimensionMismatch { found: usize, expected: usize },
    #[error("training split has no samples of class {0}")]
    DegenerateSplit(DurationClass),
    #[error("procedure too short: no complete window")]
    TooShort,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint schema_version {found} not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TeGcn,
    SnapshotGcn,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::SnapshotGcn, ModelKind::TeGcn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TeGcn => "te_gcn",
            ModelKind::SnapshotGcn => "snapshot_gcn",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "te_gcn" | "te-gcn" => Ok(ModelKind::TeGcn),
            "snapshot_gcn" | "snapshot-gcn" => Ok(ModelKind::SnapshotGcn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Symmetric normalization of an undirected 0/1 adjacency with self-loops.
fn normalized_adjacency(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> CsrMatrix {
    let mut pairs: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for (a, b) in edges {
        pairs.insert((a, b));
        pairs.insert((b, a));
    }
    let mut degree = vec![0.0f64; n];
    for &(a, _) in &pairs {
        degree[a] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    CsrMatrix::from_triplets(
        n,
        n,
        pairs
            .into_iter()
            .map(|(a, b)| (a, b, inv_sqrt[a] * inv_sqrt[b]))
            .collect(),
    )
}

/// `Â` over snapshot and identity edges of a time-expanded graph.
pub fn normalize_adjacency(graph: &TimeExpandedGraph) -> CsrMatrix {
    normalized_adjacency(
        graph.nodes.len(),
        graph.snap_edges.iter().chain(&graph.temp_edges).copied(),
    )
}

/// `Â` over snapshot edges only, as used by the snapshot baseline.
pub fn normalize_snapshot_adjacency(graph: &TimeExpandedGraph) -> CsrMatrix {
    normalized_adjacency(graph.nodes.len(), graph.snap_edges.iter().copied())
}

/// Pooling weights `(node, weight)` of one graph for a model kind.
fn pooling_weights(graph: &TimeExpandedGraph, kind: ModelKind) -> Vec<(usize, f64)> {
    let n = graph.nodes.len();
    match kind {
        ModelKind::TeGcn | ModelKind::Mlp => (0..n).map(|i| (i, 1.0 / n as f64)).collect(),
        ModelKind::SnapshotGcn => {
            let mut per_window = std::collections::BTreeMap::<usize, usize>::new();
            for node in &graph.nodes {
                *per_window.entry(node.window).or_default() += 1;
            }
            let windows = per_window.len() as f64;
            graph
                .nodes
                .iter()
                .enumerate()
                .map(|(i, node)| (i, 1.0 / (windows * per_window[&node.window] as f64)))
                .collect()
        }
    }
}

/// One graph converted to normalized feature rows, propagation matrix
/// entries and pooling weights for a given model kind.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    nodes: usize,
    width: usize,
    features: Vec<f64>,
    adjacency: Vec<(usize, usize, f64)>,
    pooling: Vec<(usize, f64)>,
    pub label: Option<DurationClass>,
}

impl PreparedGraph {
    pub fn new(
        graph: &TimeExpandedGraph,
        normalizer: &FeatureNormalizer,
        input_width: usize,
        kind: ModelKind,
    ) -> Result<Self, ModelError> {
        if graph.nodes.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut features = Vec::with_capacity(graph.nodes.len() * input_width);
        for f in &graph.features {
            let mut row = f.to_row();
            if row.len() != input_width {
                return Err(ModelError::DimensionMismatch {
                    found: row.len(),
                    expected: input_width,
                });
            }
            normalizer.apply_row(&mut row)?;
            features.extend_from_slice(&row);
        }
        let adjacency = match kind {
            ModelKind::TeGcn => triplets(&normalize_adjacency(graph)),
            ModelKind::SnapshotGcn => triplets(&normalize_snapshot_adjacency(graph)),
            ModelKind::Mlp => Vec::new(),
        };
        Ok(PreparedGraph {
            nodes: graph.nodes.len(),
            width: input_width,
            features,
            adjacency,
            pooling: pooling_weights(graph, kind),
            label: graph.label,
        })
    }
}

fn triplets(m: &CsrMatrix) -> Vec<(usize, usize, f64)> {
    (0..m.rows())
        .flat_map(|r| m.row_entries(r).map(move |(c, v)| (r, c, v)))
        .collect()
}

/// Several graphs stacked block-diagonally for one forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor2,
    pub adjacency: Option<CsrMatrix>,
    pub pooling: CsrMatrix,
    pub labels: Vec<Option<DurationClass>>,
}

impl Batch {
    pub fn new(
        graphs: &[&TimeExpandedGraph],
        normalizer: &FeatureNormalizer,
        input_width: usize,
        kind: ModelKind,
    ) -> Result<Self, ModelError> {
        let prepared = graphs
            .iter()
            .map(|g| PreparedGraph::new(g, normalizer, input_width, kind))
            .collect::<Result<Vec<_>, _>>()?;
        Batch::from_prepared(&prepared.iter().collect::<Vec<_>>(), kind)
    }

    pub fn from_prepared(graphs: &[&PreparedGraph], kind: ModelKind) -> Result<Self, ModelError> {
        let first = graphs.first().ok_or(ModelError::EmptyBatch)?;
        let width = first.width;
        let total: usize = graphs.iter().map(|g| g.nodes).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut adj = Vec::new();
        let mut pool = Vec::new();
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.width != width {
                return Err(ModelError::DimensionMismatch {
                    found: g.width,
                    expected: width,
                });
            }
            data.extend_from_slice(&g.features);
            adj.extend(
                g.adjacency
                    .iter()
                    .map(|&(r, c, v)| (r + offset, c + offset, v)),
            );
            pool.extend(g.pooling.iter().map(|&(i, w)| (gi, i + offset, w)));
            offset += g.nodes;
        }
        Ok(Batch {
            features: Tensor2::from_vec(total, width, data)?,
            adjacency: (kind != ModelKind::Mlp)
                .then(|| CsrMatrix::from_triplets(total, total, adj)),
            pooling: CsrMatrix::from_triplets(graphs.len(), total, pool),
            labels: graphs.iter().map(|g| g.label).collect(),
        })
    }

    pub fn graph_count(&self) -> usize {
        self.pooling.rows()
    }
}

/// Weight matrix (`d_in × d_out`) and bias row (`1 × d_out`) of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

/// Weights of one model. For the GCN kinds every layer but the last is a
/// propagation layer; the last is the linear head. For the MLP all layers are
/// dense layers applied after pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub layers: Vec<Dense>,
}

impl ModelParams {
    /// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// `depth` is the number of propagation layers (ignored by the MLP, which
    /// always has one hidden layer).
    pub fn init(
        kind: ModelKind,
        input: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden_layers = match kind {
            ModelKind::Mlp => 1,
            _ => depth.max(1),
        };
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, hidden_layers));
        dims.push(NUM_CLASSES);
        let layers = dims
            .windows(2)
            .map(|d| {
                let limit = (6.0 / (d[0] + d[1]) as f64).sqrt();
                let values = (0..d[0] * d[1])
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Dense {
                    weight: Tensor2::from_vec(d[0], d[1], values).expect("finite init"),
                    bias: Tensor2::zeros(1, d[1]),
                }
            })
            .collect();
        ModelParams { kind, layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records the forward pass on `tape` given parameter leaves in
    /// [`tensors`](Self::tensors) order; returns the logits (graphs × 3).
    pub fn forward_on_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &[Var],
        batch: &'a Batch,
    ) -> Result<Var, ModelError> {
        if batch.features.cols() != self.input_width() {
            return Err(ModelError::DimensionMismatch {
                found: batch.features.cols(),
                expected: self.input_width(),
            });
        }
        let x = tape.leaf(batch.features.clone());
        let last = self.layers.len() - 1;
        let (pooled, first_dense) = match self.kind {
            ModelKind::Mlp => (tape.sparse_matmul(&batch.pooling, x)?, 0),
            ModelKind::TeGcn | ModelKind::SnapshotGcn => {
                let adj = batch.adjacency.as_ref().ok_or_else(|| {
                    ModelError::Format("graph model batch without adjacency".into())
                })?;
                let mut h = x;
                for l in 0..last {
                    let hw = tape.matmul(h, params[2 * l])?;
                    let ahw = tape.sparse_matmul(adj, hw)?;
                    let z = tape.add_row(ahw, params[2 * l + 1])?;
                    h = tape.relu(z);
                }
                (tape.sparse_matmul(&batch.pooling, h)?, last)
            }
        };
        let mut h = pooled;
        for l in first_dense..=last {
            let z = tape.matmul(h, params[2 * l])?;
            let z = tape.add_row(z, params[2 * l + 1])?;
            h = if l < last { tape.relu(z) } else { z };
        }
        Ok(h)
    }

    /// Class probabilities, one row per graph of the batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Tensor2, ModelError> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let logits = self.forward_on_tape(&mut tape, &params, batch)?;
        Ok(tape.value(logits).softmax())
    }

    /// Class probabilities of a single graph.
    pub fn predict_graph(
        &self,
        graph: &TimeExpandedGraph,
        normalizer: &FeatureNormalizer,
    ) -> Result<[f64; NUM_CLASSES], ModelError> {
        let batch = Batch::new(&[graph], normalizer, self.input_width(), self.kind)?;
        let p = self.predict_batch(&batch)?;
        Ok([p.get(0, 0), p.get(0, 1), p.get(0, 2)])
    }
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
