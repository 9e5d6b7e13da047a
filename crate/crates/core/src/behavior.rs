//! Discrete behavioral classes derived from dichotomized paralinguistics.
//!
//! Loudness maps to activation, HNR to control and alpha ratio to
//! dominance. A value strictly above its threshold is `High`; ties are `Low`.
//! The classes are an interpretation layer only: models always consume the
//! continuous values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureNormalizer, NodeFeatures, PARA_DIMS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("no speaking windows in training data")]
    NoSpeechData,
    #[error("behavioral class {0} has no training samples")]
    EmptyClass(BehavioralClass),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehavioralClass {
    Silent,
    WithdrawnDisengaged,
    RestrainedConflict,
    CalmCooperative,
    QuietAuthority,
    AgitatedOveraroused,
    DominantAggressive,
    EngagedCooperative,
    CalmLeader,
}

impl BehavioralClass {
    pub const ALL: [BehavioralClass; 9] = [
        BehavioralClass::Silent,
        BehavioralClass::WithdrawnDisengaged,
        BehavioralClass::RestrainedConflict,
        BehavioralClass::CalmCooperative,
        BehavioralClass::QuietAuthority,
        BehavioralClass::AgitatedOveraroused,
        BehavioralClass::DominantAggressive,
        BehavioralClass::EngagedCooperative,
        BehavioralClass::CalmLeader,
    ];

    /// The eight classes reachable by speech.
    pub const SPEAKING: [BehavioralClass; 8] = [
        BehavioralClass::WithdrawnDisengaged,
        BehavioralClass::RestrainedConflict,
        BehavioralClass::CalmCooperative,
        BehavioralClass::QuietAuthority,
        BehavioralClass::AgitatedOveraroused,
        BehavioralClass::DominantAggressive,
        BehavioralClass::EngagedCooperative,
        BehavioralClass::CalmLeader,
    ];

    /// Table lookup from (activation, control, dominance).
    pub fn from_levels(activation: Level, control: Level, dominance: Level) -> Self {
        use BehavioralClass::*;
        use Level::*;
        match (activation, control, dominance) {
            (Low, Low, Low) => WithdrawnDisengaged,
            (Low, Low, High) => RestrainedConflict,
            (Low, High, Low) => CalmCooperative,
            (Low, High, High) => QuietAuthority,
            (High, Low, Low) => AgitatedOveraroused,
            (High, Low, High) => DominantAggressive,
            (High, High, Low) => EngagedCooperative,
            (High, High, High) => CalmLeader,
        }
    }

    /// Inverse of [`from_levels`](Self::from_levels); `None` for `Silent`.
    pub fn levels(self) -> Option<(Level, Level, Level)> {
        use BehavioralClass::*;
        use Level::*;
        Some(match self {
            Silent => return None,
            WithdrawnDisengaged => (Low, Low, Low),
            RestrainedConflict => (Low, Low, High),
            CalmCooperative => (Low, High, Low),
            QuietAuthority => (Low, High, High),
            AgitatedOveraroused => (High, Low, Low),
            DominantAggressive => (High, Low, High),
            EngagedCooperative => (High, High, Low),
            CalmLeader => (High, High, High),
        })
    }

    pub fn index(self) -> usize {
        BehavioralClass::ALL
            .iter()
            .position(|c| *c == self)
            .unwrap()
    }

    /// Number of differing axes; `Silent` is treated as differing on all three.
    pub fn hamming(self, other: BehavioralClass) -> u32 {
        match (self.levels(), other.levels()) {
            (Some(a), Some(b)) => {
                u32::from(a.0 != b.0) + u32::from(a.1 != b.1) + u32::from(a.2 != b.2)
            }
            _ if self == other => 0,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        use BehavioralClass::*;
        match self {
            Silent => "silent",
            WithdrawnDisengaged => "withdrawn_disengaged",
            RestrainedConflict => "restrained_conflict",
            CalmCooperative => "calm_cooperative",
            QuietAuthority => "quiet_authority",
            AgitatedOveraroused => "agitated_overaroused",
            DominantAggressive => "dominant_aggressive",
            EngagedCooperative => "engaged_cooperative",
            CalmLeader => "calm_leader",
        }
    }
}

impl fmt::Display for BehavioralClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehavioralClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehavioralClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown behavioral class {s:?}"))
    }
}

/// Per-feature High/Low cut points, in raw feature units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DichotomizationThresholds {
    pub loudness: f64,
    pub alpha_ratio: f64,
    pub hnr: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl DichotomizationThresholds {
    /// Medians over every speaking node.
    pub fn fit<'a>(
        nodes: impl IntoIterator<Item = &'a NodeFeatures>,
    ) -> Result<Self, BehaviorError> {
        let speaking: Vec<[f64; PARA_DIMS]> = nodes
            .into_iter()
            .filter(|n| n.spoke)
            .map(|n| n.para())
            .collect();
        if speaking.is_empty() {
            return Err(BehaviorError::NoSpeechData);
        }
        let column = |k: usize| median(&mut speaking.iter().map(|p| p[k]).collect::<Vec<_>>());
        Ok(DichotomizationThresholds {
            loudness: column(0),
            alpha_ratio: column(1),
            hnr: column(2),
        })
    }

    pub fn classify_para(&self, para: [f64; PARA_DIMS]) -> BehavioralClass {
        let level = |v: f64, t: f64| if v > t { Level::High } else { Level::Low };
        BehavioralClass::from_levels(
            level(para[0], self.loudness),
            level(para[2], self.hnr),
            level(para[1], self.alpha_ratio),
        )
    }
}

pub fn classify(
    features: &NodeFeatures,
    thresholds: &DichotomizationThresholds,
) -> BehavioralClass {
    if features.spoke {
        thresholds.classify_para(features.para())
    } else {
        BehavioralClass::Silent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    /// Mean paralinguistic vector in raw units.
    pub raw: [f64; PARA_DIMS],
    /// Same mean in normalized units (used for distances).
    pub normalized: [f64; PARA_DIMS],
    pub count: usize,
}

/// Per-class centroids of the eight speaking classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroids {
    /// Indexed like [`BehavioralClass::SPEAKING`]; `None` marks a class with
    /// no training samples.
    entries: Vec<Option<Centroid>>,
    /// Classes whose centroid does not classify back to themselves.
    pub inconsistent: Vec<BehavioralClass>,
}

impl ClassCentroids {
    pub fn fit<'a>(
        nodes: impl IntoIterator<Item = &'a NodeFeatures>,
        thresholds: &DichotomizationThresholds,
        normalizer: &FeatureNormalizer,
    ) -> Result<Self, BehaviorError> {
        let mut sums = [[0.0; PARA_DIMS]; 8];
        let mut counts = [0usize; 8];
        for n in nodes.into_iter().filter(|n| n.spoke) {
            let class = classify(n, thresholds);
            let k = class.index() - 1;
            for (s, v) in sums[k].iter_mut().zip(n.para()) {
                *s += v;
            }
            counts[k] += 1;
        }
        let mut entries = Vec::with_capacity(8);
        for k in 0..8 {
            if counts[k] == 0 {
                log::warn!(
                    "behavioral class {} has no training samples",
                    BehavioralClass::SPEAKING[k]
                );
                entries.push(None);
                continue;
            }
            let raw = sums[k].map(|s| s / counts[k] as f64);
            entries.push(Some(Centroid {
                raw,
                normalized: normalizer.normalize_para(raw)?,
                count: counts[k],
            }));
        }
        let mut centroids = ClassCentroids {
            entries,
            inconsistent: Vec::new(),
        };
        centroids.inconsistent = centroids.self_consistency_violations(thresholds);
        for c in &centroids.inconsistent {
            log::warn!("centroid of {c} does not classify back to {c}");
        }
        Ok(centroids)
    }

    pub fn get(&self, class: BehavioralClass) -> Option<&Centroid> {
        if class == BehavioralClass::Silent {
            return None;
        }
        self.entries[class.index() - 1].as_ref()
    }

    /// Usable for counterfactuals: has samples and is self-consistent.
    pub fn usable(&self, class: BehavioralClass) -> Result<&Centroid, BehaviorError> {
        match self.get(class) {
            Some(c) if !self.inconsistent.contains(&class) => Ok(c),
            _ => Err(BehaviorError::EmptyClass(class)),
        }
    }

    pub fn self_consistency_violations(
        &self,
        thresholds: &DichotomizationThresholds,
    ) -> Vec<BehavioralClass> {
        BehavioralClass::SPEAKING
            .into_iter()
            .filter(|&c| {
                self.get(c)
                    .is_some_and(|cent| thresholds.classify_para(cent.raw) != c)
            })
            .collect()
    }
}
