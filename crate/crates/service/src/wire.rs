//! Request and response bodies. Every response carries `schema_version`.

use serde::{Deserialize, Serialize};
use tegraph::counterfactual::{
    CounterfactualEdit, CounterfactualResult, SearchLevel, SensitivityCurve,
};
use tegraph::graph::{GraphDump, GraphMember};
use tegraph::model::{DurationClass, ModelKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    /// Optional; when present it must equal the service schema version.
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub checkpoint: String,
    /// Procedure in the line-delimited ingestion format.
    pub procedure_jsonl: String,
    /// First absolute window of the session graph.
    #[serde(default)]
    pub window_start: usize,
    #[serde(default = "default_window_count")]
    pub window_count: usize,
}

fn default_window_count() -> usize {
    tegraph::graph::SAMPLE_WINDOWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    /// Number of edits on the stack.
    pub depth: usize,
    pub probabilities: [f64; 3],
    pub predicted_class: DurationClass,
    pub baseline: [f64; 3],
    /// `probabilities - baseline`.
    pub delta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub procedure_id: String,
    pub checkpoint: String,
    pub model: ModelKind,
    pub window_range: (usize, usize),
    pub members: Vec<GraphMember>,
    pub prediction: PredictionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub prediction: PredictionView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub edit: CounterfactualEdit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub edit: CounterfactualEdit,
    pub prediction: PredictionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub undone: CounterfactualEdit,
    pub prediction: PredictionView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    pub level: SearchLevel,
    /// Defaults to the class one step faster than the current prediction.
    #[serde(default)]
    pub target: Option<DurationClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub result: CounterfactualResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub curve: SensitivityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEdges {
    pub window: usize,
    pub snap_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub depth: usize,
    /// Broadcast edge count of every window in the requested range.
    pub window_edges: Vec<WindowEdges>,
    /// Nodes of the requested windows and the edges among them. Node ids are
    /// those of the full session graph.
    pub graph: GraphDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeleteResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub id: String,
    pub model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema_version: u32,
    pub status: String,
    pub checkpoints: Vec<CheckpointInfo>,
    pub sessions: usize,
}
