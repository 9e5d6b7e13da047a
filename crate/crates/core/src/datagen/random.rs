//! Random snapshot and time-expanded graphs for property tests and oracles.

use std::collections::HashMap;

use rand::Rng;

use crate::features::NodeFeatures;
use crate::graph::{build_snapshot, expand, SnapshotGraph, TimeExpandedGraph};
use crate::ingest::{MemberWindow, Role, WindowSlice};

/// Shape of a random graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGraphSpec {
    pub members: usize,
    pub windows: usize,
    pub presence: f64,
    pub speech: f64,
    /// Action one-hot width, "other" slot included.
    pub action_slots: usize,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        RandomGraphSpec {
            members: 5,
            windows: 12,
            presence: 0.9,
            speech: 0.4,
            action_slots: 4,
        }
    }
}

/// Features of one present member; paralinguistics are the silence encoding
/// when `spoke` is false.
pub fn random_features(
    rng: &mut impl Rng,
    role: Role,
    spoke: bool,
    action_slots: usize,
) -> NodeFeatures {
    let mut role_onehot = [0u8; 6];
    role_onehot[role.index()] = 1;
    let mut f = NodeFeatures {
        loudness: 0.0,
        alpha_ratio: 0.0,
        hnr: 0.0,
        position: (rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0)),
        displacement_mean: rng.gen_range(0.0..1.5),
        displacement_std: rng.gen_range(0.0..0.5),
        action_onehot: (0..action_slots)
            .map(|_| u8::from(rng.gen_bool(0.3)))
            .collect(),
        role_onehot,
        spoke,
    };
    if spoke {
        f.set_para([
            rng.gen_range(0.1..1.2),
            rng.gen_range(-22.0..-2.0),
            rng.gen_range(2.0..15.0),
        ]);
    }
    f
}

/// One window with `(member_id, role, spoke)` triples present.
pub fn snapshot_from(index: usize, present: &[(String, Role, NodeFeatures)]) -> SnapshotGraph {
    let window = WindowSlice {
        index,
        start: 15.0 * index as f64,
        end: 15.0 * (index + 1) as f64,
        members: present
            .iter()
            .map(|(id, role, f)| MemberWindow {
                member_id: id.clone(),
                role: *role,
                present: true,
                spoke: f.spoke,
                turns: vec![],
                positions: vec![],
                actions: vec![],
                voiced_frames: vec![],
            })
            .collect(),
    };
    let features: HashMap<String, NodeFeatures> = present
        .iter()
        .map(|(id, _, f)| (id.clone(), f.clone()))
        .collect();
    build_snapshot(&window, &features).expect("features for all present members")
}

/// A random window with `n` present members of which each speaks with
/// probability `speech`.
pub fn random_snapshot(
    rng: &mut impl Rng,
    index: usize,
    n: usize,
    speech: f64,
    action_slots: usize,
) -> SnapshotGraph {
    let present: Vec<(String, Role, NodeFeatures)> = (0..n)
        .map(|m| {
            let role = Role::ALL[m % Role::ALL.len()];
            let spoke = rng.gen_bool(speech);
            (
                format!("m{m}"),
                role,
                random_features(rng, role, spoke, action_slots),
            )
        })
        .collect();
    snapshot_from(index, &present)
}

/// Random snapshots fused into a time-expanded graph. Every window keeps at
/// least one member so no window is empty.
pub fn random_graph(rng: &mut impl Rng, spec: &RandomGraphSpec) -> TimeExpandedGraph {
    let snapshots: Vec<SnapshotGraph> = (0..spec.windows)
        .map(|w| {
            let mut present: Vec<(String, Role, NodeFeatures)> = Vec::new();
            for m in 0..spec.members {
                if rng.gen_bool(spec.presence) {
                    let role = Role::ALL[m % Role::ALL.len()];
                    let spoke = rng.gen_bool(spec.speech);
                    present.push((
                        format!("m{m}"),
                        role,
                        random_features(rng, role, spoke, spec.action_slots),
                    ));
                }
            }
            if present.is_empty() {
                let m = rng.gen_range(0..spec.members);
                let role = Role::ALL[m % Role::ALL.len()];
                present.push((
                    format!("m{m}"),
                    role,
                    random_features(rng, role, true, spec.action_slots),
                ));
            }
            snapshot_from(w, &present)
        })
        .collect();
    expand("random", &snapshots).expect("consecutive non-empty snapshots")
}
