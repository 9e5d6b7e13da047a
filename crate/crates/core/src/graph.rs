//! Snapshot interaction graphs and their fusion into time-expanded graphs.
//!
//! A snapshot holds the members present in one window; every speaker gets a
//! directed edge to every other present member (broadcast assumption). The
//! time-expanded graph stacks a run of snapshots, one node per
//! `(member, window)` presence, and links each member's consecutive presences
//! with identity edges. Gaps in presence are bridged: an identity edge joins
//! a presence window to the member's next presence window.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{classify, BehavioralClass, DichotomizationThresholds};
use crate::features::{member_features, ActionVocabulary, NodeFeatures, PARA_DIMS, SILENCE};
use crate::ingest::{Role, WindowSlice, WindowedProcedure};
use crate::model::DurationClass;

/// Windows per standard sample (3 minutes of 15-second windows).
pub const SAMPLE_WINDOWS: usize = 12;
pub const DUMP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("cannot expand an empty snapshot sequence")]
    EmptySequence,
    #[error("snapshot window indices are not consecutive at position {0}")]
    NonConsecutive(usize),
    #[error("no features supplied for present member {0:?}")]
    MissingFeatures(String),
    #[error("stride must be at least 1")]
    InvalidStride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub member_id: String,
    pub features: NodeFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    pub window_index: usize,
    pub nodes: Vec<SnapshotNode>,
    /// `(speaker, listener)` pairs of node positions, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl SnapshotGraph {
    pub fn speaker_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.features.spoke).count()
    }
}

fn broadcast_edges(speaking: &[bool]) -> Vec<(usize, usize)> {
    let n = speaking.len();
    let mut edges = Vec::new();
    for (i, &spoke) in speaking.iter().enumerate() {
        if spoke {
            edges.extend((0..n).filter(|&j| j != i).map(|j| (i, j)));
        }
    }
    edges
}

/// Builds the snapshot of one window from precomputed features of every
/// present member. Speakers are taken from the features' spoke flag.
pub fn build_snapshot(
    window: &WindowSlice,
    features: &HashMap<String, NodeFeatures>,
) -> Result<SnapshotGraph, GraphError> {
    let nodes = window
        .members
        .iter()
        .filter(|m| m.present)
        .map(|m| {
            features
                .get(&m.member_id)
                .map(|f| SnapshotNode {
                    member_id: m.member_id.clone(),
                    features: f.clone(),
                })
                .ok_or_else(|| GraphError::MissingFeatures(m.member_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let speaking: Vec<bool> = nodes.iter().map(|n| n.features.spoke).collect();
    Ok(SnapshotGraph {
        window_index: window.index,
        edges: broadcast_edges(&speaking),
        nodes,
    })
}

/// Computes features and the snapshot for every window of a procedure.
pub fn build_snapshots(
    windowed: &WindowedProcedure,
    vocab: &ActionVocabulary,
) -> Vec<SnapshotGraph> {
    windowed
        .windows
        .iter()
        .map(|w| {
            let features = w
                .members
                .iter()
                .filter(|m| m.present)
                .map(|m| (m.member_id.clone(), member_features(m, w.index, vocab)))
                .collect();
            build_snapshot(w, &features).expect("features computed for every present member")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMember {
    pub member_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TeNode {
    /// Index into [`TimeExpandedGraph::members`].
    pub member: usize,
    /// Absolute window index within the procedure.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeExpandedGraph {
    pub procedure_id: String,
    /// `[start, end)` absolute window indices.
    pub window_range: (usize, usize),
    pub members: Vec<GraphMember>,
    pub nodes: Vec<TeNode>,
    pub features: Vec<NodeFeatures>,
    /// Within-window broadcast edges, sorted.
    pub snap_edges: Vec<(usize, usize)>,
    /// Identity edges `(earlier, later)` between presences of one member, sorted.
    pub temp_edges: Vec<(usize, usize)>,
    pub label: Option<DurationClass>,
    /// Per-member mean speaking paralinguistics at construction time.
    pub speaking_means: Vec<Option<[f64; PARA_DIMS]>>,
    pub global_speaking_mean: [f64; PARA_DIMS],
}

fn para_mean<'a>(it: impl Iterator<Item = &'a NodeFeatures>) -> Option<[f64; PARA_DIMS]> {
    let mut sum = [0.0; PARA_DIMS];
    let mut n = 0usize;
    for f in it.filter(|f| f.spoke) {
        for (s, v) in sum.iter_mut().zip(f.para()) {
            *s += v;
        }
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Fuses consecutive snapshots into one time-expanded graph.
pub fn expand(
    procedure_id: &str,
    snapshots: &[SnapshotGraph],
) -> Result<TimeExpandedGraph, GraphError> {
    let first = snapshots.first().ok_or(GraphError::EmptySequence)?;
    for (i, pair) in snapshots.windows(2).enumerate() {
        if pair[1].window_index != pair[0].window_index + 1 {
            return Err(GraphError::NonConsecutive(i + 1));
        }
    }
    let mut members: Vec<GraphMember> = Vec::new();
    let mut member_idx: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut features = Vec::new();
    let mut snap_edges = Vec::new();
    let mut last_seen: Vec<Option<usize>> = Vec::new();
    let mut temp_edges = Vec::new();

    for snap in snapshots {
        let offset = nodes.len();
        for node in &snap.nodes {
            let m = *member_idx
                .entry(node.member_id.as_str())
                .or_insert_with(|| {
                    members.push(GraphMember {
                        member_id: node.member_id.clone(),
                        role: node.features.role(),
                    });
                    last_seen.push(None);
                    members.len() - 1
                });
            let id = nodes.len();
            if let Some(prev) = last_seen[m] {
                temp_edges.push((prev, id));
            }
            last_seen[m] = Some(id);
            nodes.push(TeNode {
                member: m,
                window: snap.window_index,
            });
            features.push(node.features.clone());
        }
        snap_edges.extend(snap.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
    }
    snap_edges.sort_unstable();
    temp_edges.sort_unstable();

    let speaking_means = (0..members.len())
        .map(|m| {
            para_mean(
                nodes
                    .iter()
                    .zip(&features)
                    .filter(|(n, _)| n.member == m)
                    .map(|(_, f)| f),
            )
        })
        .collect();
    let global_speaking_mean = para_mean(features.iter()).unwrap_or(SILENCE);
    let last = snapshots.last().unwrap();
    Ok(TimeExpandedGraph {
        procedure_id: procedure_id.to_string(),
        window_range: (first.window_index, last.window_index + 1),
        members,
        nodes,
        features,
        snap_edges,
        temp_edges,
        label: None,
        speaking_means,
        global_speaking_mean,
    })
}

/// Overlapping samples of `span` windows starting every `stride` windows.
/// Shorter procedures yield a single truncated sample.
pub fn slide_samples(
    procedure_id: &str,
    snapshots: &[SnapshotGraph],
    stride: usize,
    span: usize,
    label: Option<DurationClass>,
) -> Result<Vec<TimeExpandedGraph>, GraphError> {
    if stride == 0 || span == 0 {
        return Err(GraphError::InvalidStride);
    }
    if snapshots.is_empty() {
        return Ok(Vec::new());
    }
    let starts: Vec<usize> = if snapshots.len() < span {
        vec![0]
    } else {
        (0..=snapshots.len() - span).step_by(stride).collect()
    };
    starts
        .into_iter()
        .map(|s| {
            let end = (s + span).min(snapshots.len());
            let mut g = expand(procedure_id, &snapshots[s..end])?;
            g.label = label;
            Ok(g)
        })
        .collect()
}

impl TimeExpandedGraph {
    pub fn window_count(&self) -> usize {
        self.window_range.1 - self.window_range.0
    }

    pub fn node_index(&self, member: usize, window: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.member == member && n.window == window)
    }

    pub fn member_index(&self, member_id: &str) -> Option<usize> {
        self.members.iter().position(|m| m.member_id == member_id)
    }

    /// Node ids of one window, in node order.
    pub fn window_nodes(&self, window: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].window == window)
            .collect()
    }

    pub fn edge_count_in_window(&self, window: usize) -> usize {
        self.snap_edges
            .iter()
            .filter(|&&(a, _)| self.nodes[a].window == window)
            .count()
    }

    /// Recovers the snapshots this graph was expanded from.
    pub fn snapshots(&self) -> Vec<SnapshotGraph> {
        (self.window_range.0..self.window_range.1)
            .map(|w| {
                let ids = self.window_nodes(w);
                let local: HashMap<usize, usize> =
                    ids.iter().enumerate().map(|(l, &g)| (g, l)).collect();
                let mut edges: Vec<(usize, usize)> = self
                    .snap_edges
                    .iter()
                    .filter_map(|(a, b)| Some((*local.get(a)?, *local.get(b)?)))
                    .collect();
                edges.sort_unstable();
                SnapshotGraph {
                    window_index: w,
                    nodes: ids
                        .iter()
                        .map(|&g| SnapshotNode {
                            member_id: self.members[self.nodes[g].member].member_id.clone(),
                            features: self.features[g].clone(),
                        })
                        .collect(),
                    edges,
                }
            })
            .collect()
    }

    /// Relabels nodes: node `i` of the result is node `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> TimeExpandedGraph {
        assert_eq!(
            order.len(),
            self.nodes.len(),
            "order must be a permutation of the nodes"
        );
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let remap = |edges: &[(usize, usize)]| {
            let mut e: Vec<(usize, usize)> = edges
                .iter()
                .map(|&(a, b)| (inverse[a], inverse[b]))
                .collect();
            e.sort_unstable();
            e
        };
        TimeExpandedGraph {
            nodes: order.iter().map(|&o| self.nodes[o]).collect(),
            features: order.iter().map(|&o| self.features[o].clone()).collect(),
            snap_edges: remap(&self.snap_edges),
            temp_edges: remap(&self.temp_edges),
            ..self.clone()
        }
    }

    pub fn dump(&self, thresholds: Option<&DichotomizationThresholds>) -> GraphDump {
        GraphDump {
            schema_version: DUMP_SCHEMA_VERSION,
            procedure_id: self.procedure_id.clone(),
            window_range: self.window_range,
            label: self.label,
            members: self.members.clone(),
            nodes: self
                .nodes
                .iter()
                .zip(&self.features)
                .enumerate()
                .map(|(id, (n, f))| DumpNode {
                    id,
                    member_id: self.members[n.member].member_id.clone(),
                    window: n.window,
                    spoke: f.spoke,
                    behavioral_class: thresholds.map(|t| classify(f, t)),
                    features: f.clone(),
                })
                .collect(),
            edges: self
                .snap_edges
                .iter()
                .map(|&(source, target)| DumpEdge {
                    source,
                    target,
                    kind: EdgeKind::Snap,
                })
                .chain(self.temp_edges.iter().map(|&(source, target)| DumpEdge {
                    source,
                    target,
                    kind: EdgeKind::Temp,
                }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Snap,
    Temp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub member_id: String,
    pub window: usize,
    pub spoke: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub behavioral_class: Option<BehavioralClass>,
    pub features: NodeFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEdge {
    pub source: usize,
    pub target: usize,
    pub kind: EdgeKind,
}

/// Document form of a time-expanded graph: node table plus edge table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub schema_version: u32,
    pub procedure_id: String,
    pub window_range: (usize, usize),
    pub label: Option<DurationClass>,
    pub members: Vec<GraphMember>,
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<DumpEdge>,
}
