use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Operative-time class of a procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    Slow,
    Medium,
    Fast,
}

impl DurationClass {
    pub const ALL: [DurationClass; 3] = [
        DurationClass::Slow,
        DurationClass::Medium,
        DurationClass::Fast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        DurationClass::ALL.get(i).copied()
    }

    /// The next faster class, if any.
    pub fn faster(self) -> Option<Self> {
        match self {
            DurationClass::Slow => Some(DurationClass::Medium),
            DurationClass::Medium => Some(DurationClass::Fast),
            DurationClass::Fast => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DurationClass::Slow => "slow",
            DurationClass::Medium => "medium",
            DurationClass::Fast => "fast",
        }
    }
}

impl fmt::Display for DurationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DurationClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DurationClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown duration class {s:?}"))
    }
}

/// `μ ± σ` cut points over training durations (population σ).
///
/// Durations above `slow_cut` are slow, below `fast_cut` fast, everything
/// else (boundaries included) medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationBoundaries {
    pub mean: f64,
    pub std: f64,
    pub fast_cut: f64,
    pub slow_cut: f64,
}

impl DurationBoundaries {
    pub fn fit(durations: &[f64]) -> Option<Self> {
        if durations.is_empty() {
            return None;
        }
        let n = durations.len() as f64;
        let mean = durations.iter().sum::<f64>() / n;
        let std = (durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(DurationBoundaries {
            mean,
            std,
            fast_cut: mean - std,
            slow_cut: mean + std,
        })
    }

    pub fn classify(&self, duration: f64) -> DurationClass {
        if duration > self.slow_cut {
            DurationClass::Slow
        } else if duration < self.fast_cut {
            DurationClass::Fast
        } else {
            DurationClass::Medium
        }
    }
}
