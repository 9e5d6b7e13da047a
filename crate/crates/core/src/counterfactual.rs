//! Counterfactual explanations at two levels.
//!
//! Topological edits toggle one member's speech in one window
//! ([`TopoIntervention`]); behavioral edits move a member's speaking windows
//! onto another class centroid ([`ClassSwitch`]). Both searches are
//! gradient-free and evaluate candidates against a frozen checkpoint in a
//! canonical order, so results are deterministic. All edits are functional:
//! the input graph is never mutated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{classify, BehavioralClass, ClassCentroids, DichotomizationThresholds};
use crate::graph::TimeExpandedGraph;
use crate::model::{argmax, DurationClass, ModelCheckpoint, ModelError};

/// Exhaustive topological search runs when members × windows is at most this.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("target class not reachable (best achieved: {})", .0.achieved)]
    Unreachable(Box<CounterfactualResult>),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("unusable class switch: {0}")]
    UnusableClass(String),
    #[error("no graph in the evaluation set is predicted as {0}")]
    EmptySourceClass(DurationClass),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopoKind {
    RemoveSpeech,
    AddSpeech,
}

/// Toggles the speech of one member in one window (absolute window index).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopoIntervention {
    pub member_id: String,
    pub window: usize,
    pub kind: TopoKind,
}

/// Moves a member's speaking windows onto the centroid of `target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassSwitch {
    pub member_id: String,
    pub target: BehavioralClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum CounterfactualEdit {
    Topo(TopoIntervention),
    Feature(ClassSwitch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchLevel {
    Topo,
    Feature,
}

impl std::str::FromStr for SearchLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topo" => Ok(SearchLevel::Topo),
            "feature" => Ok(SearchLevel::Feature),
            _ => Err(format!("unknown level {s:?} (expected topo or feature)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub target: DurationClass,
    pub edits: Vec<CounterfactualEdit>,
    /// Probabilities before any edit and after each edit.
    pub trace: Vec<[f64; 3]>,
    /// Cumulative modified fraction after each step, aligned with `trace`.
    pub modified_fraction: Vec<f64>,
    pub achieved: DurationClass,
    pub reached: bool,
    /// Edit count for topological results; summed Hamming distance for
    /// behavioral ones.
    pub cost: f64,
    /// Summed centroid distance in normalized units (behavioral only).
    pub tie_break_distance: f64,
    /// Set when an exhaustive search proved the edit count minimal.
    pub certified_minimal: bool,
}

impl CounterfactualResult {
    pub fn baseline(&self) -> [f64; 3] {
        self.trace[0]
    }

    pub fn final_probabilities(&self) -> [f64; 3] {
        *self.trace.last().expect("trace includes the baseline")
    }

    /// Target probability gained over the baseline.
    pub fn gain(&self) -> f64 {
        let t = self.target.index();
        self.final_probabilities()[t] - self.baseline()[t]
    }
}

fn class_of(p: &[f64; 3]) -> DurationClass {
    DurationClass::from_index(argmax(p)).expect("three classes")
}

fn node_of(
    graph: &TimeExpandedGraph,
    member_id: &str,
    window: usize,
) -> Result<usize, CounterfactualError> {
    let m = graph.member_index(member_id).ok_or_else(|| {
        CounterfactualError::InvalidEdit(format!("member {member_id:?} not in graph"))
    })?;
    graph.node_index(m, window).ok_or_else(|| {
        CounterfactualError::InvalidEdit(format!(
            "member {member_id:?} not present in window {window}"
        ))
    })
}

/// Applies one speech toggle, returning the edited copy.
pub fn apply_topo(
    graph: &TimeExpandedGraph,
    edit: &TopoIntervention,
) -> Result<TimeExpandedGraph, CounterfactualError> {
    let node = node_of(graph, &edit.member_id, edit.window)?;
    let spoke = graph.features[node].spoke;
    let mut out = graph.clone();
    match edit.kind {
        TopoKind::RemoveSpeech => {
            if !spoke {
                return Err(CounterfactualError::InvalidEdit(format!(
                    "{} is silent in window {}",
                    edit.member_id, edit.window
                )));
            }
            out.snap_edges.retain(|&(a, _)| a != node);
            out.features[node].silence();
        }
        TopoKind::AddSpeech => {
            if spoke {
                return Err(CounterfactualError::InvalidEdit(format!(
                    "{} already speaks in window {}",
                    edit.member_id, edit.window
                )));
            }
            let member = graph.nodes[node].member;
            out.snap_edges.extend(
                graph
                    .window_nodes(edit.window)
                    .into_iter()
                    .filter(|&o| o != node)
                    .map(|o| (node, o)),
            );
            out.snap_edges.sort_unstable();
            let para = graph.speaking_means[member].unwrap_or(graph.global_speaking_mean);
            out.features[node].spoke = true;
            out.features[node].set_para(para);
        }
    }
    Ok(out)
}

/// State needed to revert a topological edit exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoUndo {
    node: usize,
    features: crate::features::NodeFeatures,
    edges: Vec<(usize, usize)>,
}

impl TopoUndo {
    /// Restores the edited node's features and outgoing edges.
    pub fn revert(&self, graph: &TimeExpandedGraph) -> TimeExpandedGraph {
        let mut out = graph.clone();
        out.snap_edges.retain(|&(a, _)| a != self.node);
        out.snap_edges.extend_from_slice(&self.edges);
        out.snap_edges.sort_unstable();
        out.features[self.node] = self.features.clone();
        out
    }
}

/// [`apply_topo`] plus the record that inverts it.
pub fn apply_topo_reversible(
    graph: &TimeExpandedGraph,
    edit: &TopoIntervention,
) -> Result<(TimeExpandedGraph, TopoUndo), CounterfactualError> {
    let out = apply_topo(graph, edit)?;
    let node = node_of(graph, &edit.member_id, edit.window)?;
    let undo = TopoUndo {
        node,
        features: graph.features[node].clone(),
        edges: graph
            .snap_edges
            .iter()
            .copied()
            .filter(|&(a, _)| a == node)
            .collect(),
    };
    Ok((out, undo))
}

/// The edit that undoes `edit` by toggling back (exact for AddSpeech, and for
/// RemoveSpeech up to the restored paralinguistics, which become the
/// member's speaking mean).
pub fn inverse_topo(edit: &TopoIntervention) -> TopoIntervention {
    TopoIntervention {
        kind: match edit.kind {
            TopoKind::RemoveSpeech => TopoKind::AddSpeech,
            TopoKind::AddSpeech => TopoKind::RemoveSpeech,
        },
        ..edit.clone()
    }
}

/// Every valid speech toggle, in canonical (member_id, window, kind) order.
pub fn topo_candidates(graph: &TimeExpandedGraph) -> Vec<TopoIntervention> {
    let mut out: Vec<TopoIntervention> = graph
        .nodes
        .iter()
        .zip(&graph.features)
        .map(|(n, f)| TopoIntervention {
            member_id: graph.members[n.member].member_id.clone(),
            window: n.window,
            kind: if f.spoke {
                TopoKind::RemoveSpeech
            } else {
                TopoKind::AddSpeech
            },
        })
        .collect();
    out.sort_by(|a, b| (&a.member_id, a.window, a.kind).cmp(&(&b.member_id, b.window, b.kind)));
    out
}

/// Number of possible directed speaker-listener pairs over all windows.
fn possible_edges(graph: &TimeExpandedGraph) -> usize {
    (graph.window_range.0..graph.window_range.1)
        .map(|w| {
            let n = graph.window_nodes(w).len();
            n * n.saturating_sub(1)
        })
        .sum()
}

fn edge_change_fraction(original: &TimeExpandedGraph, edited: &TimeExpandedGraph) -> f64 {
    let total = possible_edges(original);
    if total == 0 {
        return 0.0;
    }
    let a: std::collections::BTreeSet<_> = original.snap_edges.iter().collect();
    let b: std::collections::BTreeSet<_> = edited.snap_edges.iter().collect();
    a.symmetric_difference(&b).count() as f64 / total as f64
}

struct TopoPath {
    edits: Vec<TopoIntervention>,
    trace: Vec<[f64; 3]>,
    fraction: Vec<f64>,
}

fn topo_result(target: DurationClass, path: TopoPath, certified: bool) -> CounterfactualResult {
    let last = *path.trace.last().unwrap();
    CounterfactualResult {
        target,
        cost: path.edits.len() as f64,
        edits: path
            .edits
            .into_iter()
            .map(CounterfactualEdit::Topo)
            .collect(),
        achieved: class_of(&last),
        reached: class_of(&last) == target,
        trace: path.trace,
        modified_fraction: path.fraction,
        tie_break_distance: 0.0,
        certified_minimal: certified,
    }
}

fn finish(result: CounterfactualResult) -> Result<CounterfactualResult, CounterfactualError> {
    if result.reached {
        Ok(result)
    } else {
        Err(CounterfactualError::Unreachable(Box::new(result)))
    }
}

/// Greedy forward selection: each step applies the not-yet-used toggle with
/// the highest target probability, as long as it improves on the current one.
pub fn greedy_topo_search(
    graph: &TimeExpandedGraph,
    checkpoint: &ModelCheckpoint,
    target: DurationClass,
) -> Result<CounterfactualResult, CounterfactualError> {
    let t = target.index();
    let baseline = checkpoint.predict_graph(graph)?;
    let mut remaining = topo_candidates(graph);
    let mut current = graph.clone();
    let mut path = TopoPath {
        edits: Vec::new(),
        trace: vec![baseline],
        fraction: vec![0.0],
    };
    let mut probs = baseline;
    while class_of(&probs) != target && !remaining.is_empty() {
        let scored: Vec<Result<(TimeExpandedGraph, [f64; 3]), CounterfactualError>> = remaining
            .par_iter()
            .map(|e| {
                let g = apply_topo(&current, e)?;
                let p = checkpoint.predict_graph(&g)?;
                Ok((g, p))
            })
            .collect();
        let mut best: Option<(usize, TimeExpandedGraph, [f64; 3])> = None;
        for (i, s) in scored.into_iter().enumerate() {
            let (g, p) = s?;
            if best.as_ref().is_none_or(|b| p[t] > b.2[t]) {
                best = Some((i, g, p));
            }
        }
        let (i, g, p) = best.expect("non-empty candidate set");
        if p[t] <= probs[t] {
            break;
        }
        path.edits.push(remaining.remove(i));
        path.fraction.push(edge_change_fraction(graph, &g));
        path.trace.push(p);
        current = g;
        probs = p;
    }
    finish(topo_result(target, path, false))
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive subset search by increasing cardinality. Among the smallest
/// sets reaching `target`, the one with the highest target probability is
/// returned (first in canonical order on ties); its edits are ordered
/// greedily for the trace. Falls back to the greedy trace when unreachable.
pub fn exhaustive_topo_search(
    graph: &TimeExpandedGraph,
    checkpoint: &ModelCheckpoint,
    target: DurationClass,
) -> Result<CounterfactualResult, CounterfactualError> {
    let t = target.index();
    let baseline = checkpoint.predict_graph(graph)?;
    if class_of(&baseline) == target {
        return finish(topo_result(
            target,
            TopoPath {
                edits: Vec::new(),
                trace: vec![baseline],
                fraction: vec![0.0],
            },
            true,
        ));
    }
    let candidates = topo_candidates(graph);
    let n = candidates.len();
    for k in 1..=n {
        let mut idx: Vec<usize> = (0..k).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        loop {
            let mut g = graph.clone();
            for &i in &idx {
                g = apply_topo(&g, &candidates[i])?;
            }
            let p = checkpoint.predict_graph(&g)?;
            if class_of(&p) == target && best.as_ref().is_none_or(|b| p[t] > b.1) {
                best = Some((idx.clone(), p[t]));
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
        if let Some((set, _)) = best {
            let mut left: Vec<TopoIntervention> =
                set.iter().map(|&i| candidates[i].clone()).collect();
            let mut current = graph.clone();
            let mut path = TopoPath {
                edits: Vec::new(),
                trace: vec![baseline],
                fraction: vec![0.0],
            };
            while !left.is_empty() {
                let mut pick: Option<(usize, TimeExpandedGraph, [f64; 3])> = None;
                for (i, e) in left.iter().enumerate() {
                    let g = apply_topo(&current, e)?;
                    let p = checkpoint.predict_graph(&g)?;
                    if pick.as_ref().is_none_or(|b| p[t] > b.2[t]) {
                        pick = Some((i, g, p));
                    }
                }
                let (i, g, p) = pick.unwrap();
                path.edits.push(left.remove(i));
                path.fraction.push(edge_change_fraction(graph, &g));
                path.trace.push(p);
                current = g;
            }
            return finish(topo_result(target, path, true));
        }
    }
    greedy_topo_search(graph, checkpoint, target)
}

/// Topological counterfactual: exhaustive (certified minimal) for graphs with
/// at most [`EXHAUSTIVE_LIMIT`] member-windows, greedy otherwise.
pub fn topo_search(
    graph: &TimeExpandedGraph,
    checkpoint: &ModelCheckpoint,
    target: DurationClass,
) -> Result<CounterfactualResult, CounterfactualError> {
    if graph.members.len() * graph.window_count() <= EXHAUSTIVE_LIMIT {
        exhaustive_topo_search(graph, checkpoint, target)
    } else {
        greedy_topo_search(graph, checkpoint, target)
    }
}

/// Most frequent class over a member's speaking windows (lowest class index
/// on ties); `None` if the member never speaks.
pub fn dominant_class(
    graph: &TimeExpandedGraph,
    member: usize,
    thresholds: &DichotomizationThresholds,
) -> Option<BehavioralClass> {
    let mut counts = [0usize; 9];
    for (n, f) in graph.nodes.iter().zip(&graph.features) {
        if n.member == member && f.spoke {
            counts[classify(f, thresholds).index()] += 1;
        }
    }
    let best = (1..9).max_by_key(|&k| (counts[k], std::cmp::Reverse(k)))?;
    (counts[best] > 0).then_some(BehavioralClass::ALL[best])
}

/// Writes the raw target centroid into every speaking window of the member
/// whose current class differs from the target. Edges, spoke flags and
/// silent windows are untouched.
pub fn apply_class_switch(
    graph: &TimeExpandedGraph,
    switch: &ClassSwitch,
    centroids: &ClassCentroids,
    thresholds: &DichotomizationThresholds,
) -> Result<TimeExpandedGraph, CounterfactualError> {
    let member = graph.member_index(&switch.member_id).ok_or_else(|| {
        CounterfactualError::InvalidEdit(format!("member {:?} not in graph", switch.member_id))
    })?;
    if switch.target == BehavioralClass::Silent {
        return Err(CounterfactualError::UnusableClass(
            "silent is not a switch target".into(),
        ));
    }
    let centroid = centroids
        .usable(switch.target)
        .map_err(|e| CounterfactualError::UnusableClass(e.to_string()))?;
    let mut out = graph.clone();
    let mut speaks = false;
    for (n, f) in out.nodes.iter().zip(out.features.iter_mut()) {
        if n.member == member && f.spoke {
            speaks = true;
            if classify(f, thresholds) != switch.target {
                f.set_para(centroid.raw);
            }
        }
    }
    if !speaks {
        return Err(CounterfactualError::UnusableClass(format!(
            "{} never speaks in this graph",
            switch.member_id
        )));
    }
    Ok(out)
}

/// Applies a list of edits in order.
pub fn replay(
    graph: &TimeExpandedGraph,
    edits: &[CounterfactualEdit],
    checkpoint: &ModelCheckpoint,
) -> Result<TimeExpandedGraph, CounterfactualError> {
    let pre = &checkpoint.preprocessing;
    let mut g = graph.clone();
    for e in edits {
        g = match e {
            CounterfactualEdit::Topo(t) => apply_topo(&g, t)?,
            CounterfactualEdit::Feature(s) => {
                apply_class_switch(&g, s, &pre.centroids, &pre.thresholds)?
            }
        };
    }
    Ok(g)
}

fn reclassed_fraction(
    original: &TimeExpandedGraph,
    edited: &TimeExpandedGraph,
    th: &DichotomizationThresholds,
) -> f64 {
    let speaking = original.features.iter().filter(|f| f.spoke).count();
    if speaking == 0 {
        return 0.0;
    }
    let changed = original
        .features
        .iter()
        .zip(&edited.features)
        .filter(|(a, b)| a.spoke && classify(a, th) != classify(b, th))
        .count();
    changed as f64 / speaking as f64
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

struct SwitchCandidate {
    switch: ClassSwitch,
    hamming: u32,
    distance: f64,
}

/// Candidate switches of `members`, costed over the windows they would
/// re-class: summed Hamming distance between each window's class and the
/// target, and summed normalized distance to the target centroid.
fn switch_candidates(
    graph: &TimeExpandedGraph,
    members: &[usize],
    checkpoint: &ModelCheckpoint,
) -> Result<Vec<SwitchCandidate>, CounterfactualError> {
    let pre = &checkpoint.preprocessing;
    let mut out = Vec::new();
    for &m in members {
        let Some(own) = dominant_class(graph, m, &pre.thresholds) else {
            continue;
        };
        let mut windows = Vec::new();
        for (n, f) in graph.nodes.iter().zip(&graph.features) {
            if n.member == m && f.spoke {
                let para = pre
                    .normalizer
                    .normalize_para(f.para())
                    .map_err(ModelError::from)?;
                windows.push((classify(f, &pre.thresholds), para));
            }
        }
        for target in BehavioralClass::SPEAKING {
            if target == own {
                continue;
            }
            let Ok(c) = pre.centroids.usable(target) else {
                continue;
            };
            let moved = windows.iter().filter(|(class, _)| *class != target);
            out.push(SwitchCandidate {
                switch: ClassSwitch {
                    member_id: graph.members[m].member_id.clone(),
                    target,
                },
                hamming: moved.clone().map(|(class, _)| class.hamming(target)).sum(),
                distance: moved.map(|(_, p)| euclid(*p, c.normalized)).sum(),
            });
        }
    }
    out.sort_by(|a, b| {
        (&a.switch.member_id, a.switch.target.index())
            .cmp(&(&b.switch.member_id, b.switch.target.index()))
    });
    Ok(out)
}

/// Behavioral counterfactual: each step evaluates every (member, class)
/// switch of the members not yet switched and applies the improving one
/// with the smallest behavioral distance, then largest gain, then smallest
/// centroid distance.
pub fn feature_search(
    graph: &TimeExpandedGraph,
    checkpoint: &ModelCheckpoint,
    target: DurationClass,
) -> Result<CounterfactualResult, CounterfactualError> {
    let t = target.index();
    let pre = &checkpoint.preprocessing;
    let baseline = checkpoint.predict_graph(graph)?;
    let mut members: Vec<usize> = (0..graph.members.len()).collect();
    let mut current = graph.clone();
    let mut probs = baseline;
    let mut result = CounterfactualResult {
        target,
        edits: Vec::new(),
        trace: vec![baseline],
        modified_fraction: vec![0.0],
        achieved: class_of(&baseline),
        reached: false,
        cost: 0.0,
        tie_break_distance: 0.0,
        certified_minimal: false,
    };
    while class_of(&probs) != target && !members.is_empty() {
        // Dominant classes come from the original graph so a member's cost is
        // measured from their observed behavior.
        let candidates = switch_candidates(graph, &members, checkpoint)?;
        let scored: Vec<Result<(TimeExpandedGraph, [f64; 3]), CounterfactualError>> = candidates
            .par_iter()
            .map(|c| {
                let g = apply_class_switch(&current, &c.switch, &pre.centroids, &pre.thresholds)?;
                let p = checkpoint.predict_graph(&g)?;
                Ok((g, p))
            })
            .collect();
        let mut best: Option<(usize, TimeExpandedGraph, [f64; 3])> = None;
        for (i, s) in scored.into_iter().enumerate() {
            let (g, p) = s?;
            let gain = p[t] - probs[t];
            if gain <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((j, _, bp)) => {
                    let (a, b) = (&candidates[i], &candidates[*j]);
                    let bgain = bp[t] - probs[t];
                    (a.hamming, -gain, a.distance) < (b.hamming, -bgain, b.distance)
                }
            };
            if better {
                best = Some((i, g, p));
            }
        }
        let Some((i, g, p)) = best else {
            break;
        };
        let c = &candidates[i];
        let m = graph.member_index(&c.switch.member_id).unwrap();
        members.retain(|&x| x != m);
        result.cost += f64::from(c.hamming);
        result.tie_break_distance += c.distance;
        result
            .edits
            .push(CounterfactualEdit::Feature(c.switch.clone()));
        result
            .modified_fraction
            .push(reclassed_fraction(graph, &g, &pre.thresholds));
        result.trace.push(p);
        current = g;
        probs = p;
    }
    result.achieved = class_of(&probs);
    result.reached = result.achieved == target;
    finish(result)
}

/// Runs the search of `level`, returning the best trace even when the target
/// is not reached.
pub fn search_trace(
    graph: &TimeExpandedGraph,
    checkpoint: &ModelCheckpoint,
    level: SearchLevel,
    target: DurationClass,
) -> Result<CounterfactualResult, CounterfactualError> {
    let r = match level {
        SearchLevel::Topo => topo_search(graph, checkpoint, target),
        SearchLevel::Feature => feature_search(graph, checkpoint, target),
    };
    match r {
        Err(CounterfactualError::Unreachable(best)) => Ok(*best),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub fraction: f64,
    pub mean_gain: f64,
    pub std_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub level: SearchLevel,
    pub source: DurationClass,
    pub target: DurationClass,
    pub graphs: usize,
    pub points: Vec<SensitivityPoint>,
}

impl SensitivityCurve {
    /// Mean gain at the largest grid fraction not above `fraction`.
    pub fn gain_at(&self, fraction: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.fraction <= fraction + 1e-12)
            .last()
            .map_or(0.0, |p| p.mean_gain)
    }

    /// Mean gain once every search has finished.
    pub fn total_gain(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.mean_gain)
    }

    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("fraction\tmean_gain\tstd_gain\n");
        for p in &self.points {
            s.push_str(&format!(
                "{:.4}\t{:.6}\t{:.6}\n",
                p.fraction, p.mean_gain, p.std_gain
            ));
        }
        s
    }
}

/// Grid of modified fractions used by [`sensitivity_curve`].
pub fn sensitivity_grid() -> Vec<f64> {
    (0..=40).map(|i| f64::from(i) / 40.0).collect()
}

/// Gain of a trace at a modified fraction: the gain of the last step whose
/// cumulative fraction does not exceed it.
pub fn trace_gain_at(result: &CounterfactualResult, fraction: f64) -> f64 {
    let t = result.target.index();
    let base = result.baseline()[t];
    result
        .modified_fraction
        .iter()
        .zip(&result.trace)
        .take_while(|(f, _)| **f <= fraction + 1e-12)
        .last()
        .map_or(0.0, |(_, p)| p[t] - base)
}

/// Cumulative modified fraction versus mean target-probability gain over
/// every graph currently predicted as `source`, searching toward the next
/// faster class. Each graph contributes its best trace even when the target
/// is not reached.
pub fn sensitivity_curve(
    graphs: &[TimeExpandedGraph],
    checkpoint: &ModelCheckpoint,
    level: SearchLevel,
    source: DurationClass,
) -> Result<SensitivityCurve, CounterfactualError> {
    let target = source.faster().ok_or_else(|| {
        CounterfactualError::InvalidEdit(format!("no faster class than {source}"))
    })?;
    let mut results = Vec::new();
    for g in graphs {
        if class_of(&checkpoint.predict_graph(g)?) != source {
            continue;
        }
        results.push(search_trace(g, checkpoint, level, target)?);
    }
    if results.is_empty() {
        return Err(CounterfactualError::EmptySourceClass(source));
    }
    let n = results.len() as f64;
    let points = sensitivity_grid()
        .into_iter()
        .map(|f| {
            let gains: Vec<f64> = results.iter().map(|r| trace_gain_at(r, f)).collect();
            let mean = gains.iter().sum::<f64>() / n;
            let var = if results.len() > 1 {
                gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SensitivityPoint {
                fraction: f,
                mean_gain: mean,
                std_gain: var.sqrt(),
            }
        })
        .collect();
    Ok(SensitivityCurve {
        level,
        source,
        target,
        graphs: results.len(),
        points,
    })
}
