//! Per-window, per-member node features and their z-score normalizer.
//!
//! Row layout produced by [`NodeFeatures::to_row`]:
//!
//! | columns              | content                                   |
//! |----------------------|-------------------------------------------|
//! | 0, 1, 2              | loudness, alpha ratio, HNR                |
//! | 3, 4                 | mean position x, y                        |
//! | 5, 6                 | displacement mean, displacement std       |
//! | 7                    | spoke flag                                |
//! | 8..14                | role one-hot (order of [`Role::ALL`])     |
//! | 14..14+V+1           | action multi-hot, last slot is "other"    |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{MemberWindow, ProcedureRecord, Role, WindowSlice};

pub const PARA_DIMS: usize = 3;
pub const CONTINUOUS_DIMS: usize = 7;
pub const SPOKE_COL: usize = 7;
pub const ROLE_OFFSET: usize = 8;
pub const ACTION_OFFSET: usize = ROLE_OFFSET + Role::ALL.len();

/// Paralinguistic values of a silent node before and after normalization.
pub const SILENCE: [f64; PARA_DIMS] = [0.0; PARA_DIMS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("member {0:?} is not present in window {1}")]
    NotPresent(String, usize),
    #[error("normalizer used before fitting")]
    NotFitted,
    #[error("feature row has {found} columns, expected {expected}")]
    Width { found: usize, expected: usize },
}

/// Closed `(verb, object)` vocabulary with a reserved "other" bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionVocabulary {
    pairs: Vec<(String, String)>,
}

impl ActionVocabulary {
    pub fn new(mut pairs: Vec<(String, String)>) -> Self {
        pairs.sort();
        pairs.dedup();
        ActionVocabulary { pairs }
    }

    /// Collects every pair that occurs in the given (training) records.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a ProcedureRecord>) -> Self {
        let pairs = records
            .into_iter()
            .flat_map(|r| {
                r.action_events
                    .iter()
                    .map(|a| (a.verb.clone(), a.object.clone()))
            })
            .collect();
        ActionVocabulary::new(pairs)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Slot count including the "other" bucket.
    pub fn slots(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn other_slot(&self) -> usize {
        self.pairs.len()
    }

    /// Slot for a pair; `None` means the caller should use the "other" bucket.
    pub fn lookup(&self, verb: &str, object: &str) -> Option<usize> {
        self.pairs
            .binary_search_by(|(v, o)| (v.as_str(), o.as_str()).cmp(&(verb, object)))
            .ok()
    }

    pub fn feature_width(&self) -> usize {
        ACTION_OFFSET + self.slots()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub loudness: f64,
    pub alpha_ratio: f64,
    pub hnr: f64,
    pub position: (f64, f64),
    pub displacement_mean: f64,
    pub displacement_std: f64,
    pub action_onehot: Vec<u8>,
    pub role_onehot: [u8; 6],
    pub spoke: bool,
}

impl NodeFeatures {
    pub fn para(&self) -> [f64; PARA_DIMS] {
        [self.loudness, self.alpha_ratio, self.hnr]
    }

    pub fn set_para(&mut self, para: [f64; PARA_DIMS]) {
        [self.loudness, self.alpha_ratio, self.hnr] = para;
    }

    /// Marks the node silent and writes the silence encoding.
    pub fn silence(&mut self) {
        self.spoke = false;
        self.set_para(SILENCE);
    }

    pub fn role(&self) -> Role {
        let idx = self
            .role_onehot
            .iter()
            .position(|&v| v == 1)
            .unwrap_or(Role::ALL.len() - 1);
        Role::ALL[idx]
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(ACTION_OFFSET + self.action_onehot.len());
        row.extend_from_slice(&self.para());
        row.extend_from_slice(&[
            self.position.0,
            self.position.1,
            self.displacement_mean,
            self.displacement_std,
            if self.spoke { 1.0 } else { 0.0 },
        ]);
        row.extend(self.role_onehot.iter().map(|&v| f64::from(v)));
        row.extend(self.action_onehot.iter().map(|&v| f64::from(v)));
        row
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Builds the feature vector of one present member in one window.
///
/// Unknown `(verb, object)` pairs land in the "other" slot with a warning.
pub fn compute_node_features(
    window: &WindowSlice,
    member_id: &str,
    vocab: &ActionVocabulary,
) -> Result<NodeFeatures, FeatureError> {
    let mw = window
        .member(member_id)
        .filter(|m| m.present)
        .ok_or_else(|| FeatureError::NotPresent(member_id.to_string(), window.index))?;
    Ok(member_features(mw, window.index, vocab))
}

pub(crate) fn member_features(
    mw: &MemberWindow,
    window_index: usize,
    vocab: &ActionVocabulary,
) -> NodeFeatures {
    let para = if mw.spoke {
        let avg = |k: usize| mean(mw.voiced_frames.iter().map(|f| f[k])).unwrap_or(0.0);
        [avg(0), avg(1), avg(2)]
    } else {
        SILENCE
    };
    let position = (
        mean(mw.positions.iter().map(|p| p.1)).unwrap_or(0.0),
        mean(mw.positions.iter().map(|p| p.2)).unwrap_or(0.0),
    );
    let steps: Vec<f64> = mw
        .positions
        .windows(2)
        .map(|w| ((w[1].1 - w[0].1).powi(2) + (w[1].2 - w[0].2).powi(2)).sqrt())
        .collect();
    let displacement_mean = mean(steps.iter().copied()).unwrap_or(0.0);
    let displacement_std = mean(steps.iter().map(|s| (s - displacement_mean).powi(2)))
        .map(f64::sqrt)
        .unwrap_or(0.0);

    let mut action_onehot = vec![0u8; vocab.slots()];
    for (verb, object) in &mw.actions {
        let slot = vocab.lookup(verb, object).unwrap_or_else(|| {
            log::warn!(
                "window {window_index}: action ({verb}, {object}) of {} outside vocabulary, using \"other\"",
                mw.member_id
            );
            vocab.other_slot()
        });
        action_onehot[slot] = 1;
    }
    let mut role_onehot = [0u8; 6];
    role_onehot[mw.role.index()] = 1;

    let [loudness, alpha_ratio, hnr] = para;
    NodeFeatures {
        loudness,
        alpha_ratio,
        hnr,
        position,
        displacement_mean,
        displacement_std,
        action_onehot,
        role_onehot,
        spoke: mw.spoke,
    }
}

/// Z-score statistics for the continuous columns.
///
/// Paralinguistic columns are fitted on speaking rows only and silent rows
/// map to 0 there; motion columns use every row. Zero-variance columns get
/// std 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit<'a>(nodes: impl IntoIterator<Item = &'a NodeFeatures>) -> Self {
        let mut sums = [0.0; CONTINUOUS_DIMS];
        let mut sq = [0.0; CONTINUOUS_DIMS];
        let mut counts = [0usize; CONTINUOUS_DIMS];
        let nodes: Vec<&NodeFeatures> = nodes.into_iter().collect();
        for n in &nodes {
            let row = n.to_row();
            for d in 0..CONTINUOUS_DIMS {
                if d < PARA_DIMS && !n.spoke {
                    continue;
                }
                sums[d] += row[d];
                counts[d] += 1;
            }
        }
        let mean: Vec<f64> = (0..CONTINUOUS_DIMS)
            .map(|d| {
                if counts[d] > 0 {
                    sums[d] / counts[d] as f64
                } else {
                    0.0
                }
            })
            .collect();
        for n in &nodes {
            let row = n.to_row();
            for d in 0..CONTINUOUS_DIMS {
                if d < PARA_DIMS && !n.spoke {
                    continue;
                }
                sq[d] += (row[d] - mean[d]).powi(2);
            }
        }
        let std = (0..CONTINUOUS_DIMS)
            .map(|d| {
                let s = if counts[d] > 0 {
                    (sq[d] / counts[d] as f64).sqrt()
                } else {
                    0.0
                };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        FeatureNormalizer { mean, std }
    }

    pub fn is_fitted(&self) -> bool {
        self.mean.len() == CONTINUOUS_DIMS
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, features: &NodeFeatures) -> Result<Vec<f64>, FeatureError> {
        let mut row = features.to_row();
        self.apply_row(&mut row)?;
        Ok(row)
    }

    /// Normalizes a raw row in place; one-hot columns are untouched.
    pub fn apply_row(&self, row: &mut [f64]) -> Result<(), FeatureError> {
        if !self.is_fitted() {
            return Err(FeatureError::NotFitted);
        }
        if row.len() < ACTION_OFFSET {
            return Err(FeatureError::Width {
                found: row.len(),
                expected: ACTION_OFFSET,
            });
        }
        let spoke = row[SPOKE_COL] > 0.5;
        for d in 0..CONTINUOUS_DIMS {
            row[d] = if d < PARA_DIMS && !spoke {
                0.0
            } else {
                (row[d] - self.mean[d]) / self.std[d]
            };
        }
        Ok(())
    }

    pub fn normalize_para(&self, para: [f64; PARA_DIMS]) -> Result<[f64; PARA_DIMS], FeatureError> {
        if !self.is_fitted() {
            return Err(FeatureError::NotFitted);
        }
        Ok(std::array::from_fn(|d| {
            (para[d] - self.mean[d]) / self.std[d]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{tests::toy_record, window_procedure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(loudness: f64, spoke: bool, x: f64) -> NodeFeatures {
        NodeFeatures {
            loudness,
            alpha_ratio: loudness * 2.0,
            hnr: loudness + 1.0,
            position: (x, 0.0),
            displacement_mean: 0.0,
            displacement_std: 0.0,
            action_onehot: vec![0, 1],
            role_onehot: [1, 0, 0, 0, 0, 0],
            spoke,
        }
    }

    #[test]
    fn silent_member_gets_silence_encoding() {
        let w = window_procedure(&toy_record(60.0));
        let vocab = ActionVocabulary::fit([&toy_record(60.0)]);
        let f = compute_node_features(&w.windows[0], "d", &vocab).unwrap();
        assert!(!f.spoke);
        assert_eq!(f.para(), SILENCE);
        // recomputing is identical
        assert_eq!(
            compute_node_features(&w.windows[0], "d", &vocab).unwrap(),
            f
        );
        assert_eq!(f.action_onehot, vec![1, 0]);
    }

    #[test]
    fn single_step_displacement() {
        let w = window_procedure(&toy_record(60.0));
        let vocab = ActionVocabulary::fit([&toy_record(60.0)]);
        let f = compute_node_features(&w.windows[0], "a", &vocab).unwrap();
        assert_eq!(f.displacement_mean, 5.0);
        assert_eq!(f.displacement_std, 0.0);
        assert_eq!(f.position, (1.5, 2.0));
        assert!(f.spoke);
        assert_eq!(f.para(), [0.7, -12.0, 9.0]);
    }

    #[test]
    fn absent_member_is_an_error() {
        let w = window_procedure(&toy_record(60.0));
        let vocab = ActionVocabulary::fit([&toy_record(60.0)]);
        assert!(matches!(
            compute_node_features(&w.windows[0], "e", &vocab),
            Err(FeatureError::NotPresent(..))
        ));
    }

    #[test]
    fn unknown_action_goes_to_other_bucket() {
        let w = window_procedure(&toy_record(60.0));
        let vocab = ActionVocabulary::new(vec![("cutting".into(), "bone".into())]);
        let f = compute_node_features(&w.windows[0], "d", &vocab).unwrap();
        assert_eq!(f.action_onehot, vec![0, 1]);
    }

    #[test]
    fn constant_loudness_frames_average_exactly() {
        let mut r = toy_record(60.0);
        r.speech_turns.push(crate::ingest::SpeechTurn {
            member_id: "e".into(),
            start: 20.0,
            end: 29.0,
        });
        r.position_samples.push(crate::ingest::PositionSample {
            member_id: "e".into(),
            t: 21.0,
            x: 1.0,
            y: 1.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..17 {
            r.frames.push(crate::ingest::ParaFrame {
                member_id: "e".into(),
                t: 20.0 + 0.5 * i as f64,
                loudness: 0.7,
                alpha_ratio: rng.gen_range(-20.0..-5.0),
                hnr: rng.gen_range(0.0..15.0),
            });
        }
        let w = window_procedure(&r);
        let f = compute_node_features(&w.windows[1], "e", &ActionVocabulary::fit([&r])).unwrap();
        assert!((f.loudness - 0.7).abs() < 1e-15);
    }

    #[test]
    fn normalizer_maps_two_points_to_unit() {
        let nodes = [node(1.0, true, 1.0), node(3.0, true, 3.0)];
        let norm = FeatureNormalizer::fit(&nodes);
        assert_eq!(norm.apply(&nodes[0]).unwrap()[0], -1.0);
        assert_eq!(norm.apply(&nodes[1]).unwrap()[0], 1.0);
        assert_eq!(norm.apply(&nodes[1]).unwrap()[3], 1.0);
        // constant column (y) maps to 0, one-hots untouched
        let row = norm.apply(&nodes[0]).unwrap();
        assert_eq!(row[4], 0.0);
        assert_eq!(
            &row[ROLE_OFFSET..],
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn silent_rows_do_not_shift_paralinguistic_stats() {
        let nodes = [
            node(1.0, true, 0.0),
            node(3.0, true, 0.0),
            node(0.0, false, 0.0),
        ];
        let norm = FeatureNormalizer::fit(&nodes);
        assert_eq!(norm.mean()[0], 2.0);
        assert_eq!(norm.apply(&nodes[2]).unwrap()[..3], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn unfitted_normalizer_errors() {
        let norm = FeatureNormalizer::default();
        assert_eq!(
            norm.apply(&node(1.0, true, 0.0)),
            Err(FeatureError::NotFitted)
        );
    }

    #[test]
    fn normalized_training_columns_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nodes: Vec<NodeFeatures> = (0..500)
            .map(|_| {
                let mut n = node(
                    rng.gen_range(0.0..2.0),
                    rng.gen_bool(0.6),
                    rng.gen_range(-3.0..3.0),
                );
                n.displacement_mean = rng.gen_range(0.0..1.0);
                if !n.spoke {
                    n.silence();
                }
                n
            })
            .collect();
        let norm = FeatureNormalizer::fit(&nodes);
        let rows: Vec<Vec<f64>> = nodes.iter().map(|n| norm.apply(n).unwrap()).collect();
        for d in 0..CONTINUOUS_DIMS {
            let subset: Vec<f64> = rows
                .iter()
                .zip(&nodes)
                .filter(|(_, n)| d >= PARA_DIMS || n.spoke)
                .map(|(r, _)| r[d])
                .collect();
            let m = subset.iter().sum::<f64>() / subset.len() as f64;
            assert!(m.abs() < 1e-9, "dim {d} mean {m}");
        }
    }

    proptest::proptest! {
        #[test]
        fn one_hots_survive_normalization(bits in proptest::collection::vec(0u8..2, 4), x in -10.0f64..10.0) {
            let mut n = node(0.5, true, x);
            n.action_onehot = bits.clone();
            let norm = FeatureNormalizer::fit([&node(0.1, true, 1.0), &node(0.9, false, -1.0)]);
            let row = norm.apply(&n).unwrap();
            let tail: Vec<u8> = row[ACTION_OFFSET..].iter().map(|&v| v as u8).collect();
            proptest::prop_assert_eq!(tail, bits);
            proptest::prop_assert_eq!(row[ROLE_OFFSET..ACTION_OFFSET].iter().sum::<f64>(), 1.0);
        }
    }
}
