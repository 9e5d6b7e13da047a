//! Leave-one-team-out evaluation: fold plans, macro-F1, the baseline
//! comparison table and early-identification curves.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{TimeExpandedGraph, SAMPLE_WINDOWS};
use crate::ingest::{ProcedureRecord, WindowConfig};
use crate::model::{
    argmax, train, DurationClass, ModelCheckpoint, ModelError, ModelKind, TrainConfig,
};
use crate::pipeline::{
    fit_preprocessing, labelled_samples, predict_graphs, predict_snapshots, prepare,
    procedure_samples, procedure_snapshots, PipelineError, Sampling,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("need at least two teams, found {0}")]
    TooFewTeams(usize),
    #[error("fold holding out {team} has no training procedure of class {class}")]
    DegenerateSplit { team: String, class: DurationClass },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Pipeline(e.into())
    }
}

/// `confusion[label][prediction]` counts.
pub fn confusion_matrix(
    predictions: &[DurationClass],
    labels: &[DurationClass],
) -> [[usize; 3]; 3] {
    let mut m = [[0usize; 3]; 3];
    for (p, l) in predictions.iter().zip(labels) {
        m[l.index()][p.index()] += 1;
    }
    m
}

/// Per-class F1 from a confusion matrix; a class with no true positives
/// (including a class absent from both labels and predictions) scores 0.
pub fn per_class_f1(confusion: &[[usize; 3]; 3]) -> [f64; 3] {
    std::array::from_fn(|c| {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..3).map(|l| confusion[l][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (predicted + actual) as f64
        }
    })
}

/// Unweighted mean of the three per-class F1 scores.
pub fn macro_f1(predictions: &[DurationClass], labels: &[DurationClass]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(per_class_f1(&confusion_matrix(predictions, labels))
        .iter()
        .sum::<f64>()
        / 3.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_team: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// One fold per team (sorted by team id), holding out all of its
    /// procedures.
    pub fn leave_one_team_out(records: &[ProcedureRecord]) -> Result<Self, EvalError> {
        let teams: BTreeSet<&str> = records.iter().map(|r| r.team_id.as_str()).collect();
        if teams.len() < 2 {
            return Err(EvalError::TooFewTeams(teams.len()));
        }
        let folds = teams
            .into_iter()
            .map(|team| Fold {
                held_out_team: team.to_string(),
                train: records
                    .iter()
                    .filter(|r| r.team_id != team)
                    .map(|r| r.procedure_id.clone())
                    .collect(),
                test: records
                    .iter()
                    .filter(|r| r.team_id == team)
                    .map(|r| r.procedure_id.clone())
                    .collect(),
            })
            .collect();
        Ok(FoldPlan { folds })
    }

    /// Checks that every fold's training split, labelled by boundaries fitted
    /// on that split alone, contains all three classes.
    pub fn check_stratification(&self, records: &[ProcedureRecord]) -> Result<(), EvalError> {
        for fold in &self.folds {
            let train = select(records, &fold.train);
            let durations: Vec<f64> = train.iter().map(|r| r.duration).collect();
            let b =
                crate::model::DurationBoundaries::fit(&durations).ok_or(EvalError::EmptyInput)?;
            for class in DurationClass::ALL {
                if !durations.iter().any(|&d| b.classify(d) == class) {
                    return Err(EvalError::DegenerateSplit {
                        team: fold.held_out_team.clone(),
                        class,
                    });
                }
            }
        }
        Ok(())
    }
}

fn select<'r>(records: &'r [ProcedureRecord], ids: &[String]) -> Vec<&'r ProcedureRecord> {
    ids.iter()
        .filter_map(|id| records.iter().find(|r| &r.procedure_id == id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Architecture and optimizer settings; `kind` and `seed` are overridden
    /// per run.
    pub train: TrainConfig,
    pub sampling: Sampling,
    pub window: WindowConfig,
    /// Hold out one medium-class training team per fold for early stopping.
    pub early_stopping: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            models: ModelKind::ALL.to_vec(),
            seeds: (0..10).collect(),
            train: TrainConfig {
                hidden: 16,
                depth: 3,
                learning_rate: 0.01,
                batch_size: 16,
                max_epochs: 60,
                patience: 20,
                ..TrainConfig::default()
            },
            sampling: Sampling::default(),
            window: WindowConfig::default(),
            early_stopping: false,
        }
    }
}

/// Result of one (model, seed, fold) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub model: ModelKind,
    pub seed: u64,
    pub held_out_team: String,
    pub label: DurationClass,
    pub sample_predictions: Vec<DurationClass>,
    pub procedure_prediction: DurationClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    /// Sample-level macro-F1 per seed, pooled over all folds.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    /// Procedure-level macro-F1 per seed.
    pub per_seed_procedure: Vec<f64>,
    pub procedure_mean: f64,
    pub procedure_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub rows: Vec<ModelSummary>,
    pub folds: Vec<FoldScore>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_seed(kind: ModelKind, seed: u64, fold_index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold_index as u64) ^ (kind as u64) << 48
}

struct FoldData {
    held_out_team: String,
    label: DurationClass,
    pre: crate::model::Preprocessing,
    train_graphs: Vec<TimeExpandedGraph>,
    validation_graphs: Vec<TimeExpandedGraph>,
    test_graphs: Vec<TimeExpandedGraph>,
}

fn fold_data(
    records: &[ProcedureRecord],
    fold: &Fold,
    config: &BenchmarkConfig,
) -> Result<FoldData, EvalError> {
    let train_records = select(records, &fold.train);
    let test_records = select(records, &fold.test);
    let pre = fit_preprocessing(&train_records, config.window)?;
    let (fit_records, validation_records): (Vec<&ProcedureRecord>, Vec<&ProcedureRecord>) =
        if config.early_stopping {
            let held = train_records
                .iter()
                .filter(|r| pre.boundaries.classify(r.duration) == DurationClass::Medium)
                .map(|r| r.team_id.clone())
                .min();
            train_records
                .iter()
                .partition(|r| Some(&r.team_id) != held.as_ref())
        } else {
            (train_records.clone(), Vec::new())
        };
    let train_graphs = labelled_samples(&fit_records, &pre, config.sampling)?;
    let validation_graphs = labelled_samples(&validation_records, &pre, config.sampling)?;
    let mut test_graphs = Vec::new();
    let mut label = DurationClass::Medium;
    for r in &test_records {
        label = pre.boundaries.classify(r.duration);
        test_graphs.extend(procedure_samples(r, &pre, config.sampling, Some(label))?);
    }
    Ok(FoldData {
        held_out_team: fold.held_out_team.clone(),
        label,
        pre,
        train_graphs,
        validation_graphs,
        test_graphs,
    })
}

/// Runs every (model, seed, fold) combination. Results are identical for
/// identical inputs regardless of thread count.
pub fn run_benchmark(
    records: &[ProcedureRecord],
    config: &BenchmarkConfig,
) -> Result<BenchmarkResult, EvalError> {
    let plan = FoldPlan::leave_one_team_out(records)?;
    plan.check_stratification(records)?;
    let data: Vec<FoldData> = plan
        .folds
        .par_iter()
        .map(|f| fold_data(records, f, config))
        .collect::<Result<_, _>>()?;

    let fold_count = data.len();
    let jobs: Vec<(ModelKind, u64, usize)> = config
        .models
        .iter()
        .flat_map(|&m| {
            config
                .seeds
                .iter()
                .flat_map(move |&s| (0..fold_count).map(move |f| (m, s, f)))
        })
        .collect();
    let folds: Vec<FoldScore> = jobs
        .par_iter()
        .map(|&(model, seed, f)| {
            let d = &data[f];
            let train_prepared = prepare(&d.train_graphs, &d.pre, model)?;
            let validation = prepare(&d.validation_graphs, &d.pre, model)?;
            let train_config = TrainConfig {
                kind: model,
                seed: run_seed(model, seed, f),
                ..config.train.clone()
            };
            let validation = (!validation.is_empty()).then_some(validation.as_slice());
            let (params, _) = train(&train_prepared, validation, &train_config)?;
            let checkpoint = ModelCheckpoint {
                params,
                preprocessing: d.pre.clone(),
                config: train_config,
            };
            let probs = predict_graphs(&d.test_graphs, &checkpoint)?;
            let mut mean = [0.0; 3];
            for p in &probs {
                for c in 0..3 {
                    mean[c] += p[c] / probs.len() as f64;
                }
            }
            Ok(FoldScore {
                model,
                seed,
                held_out_team: d.held_out_team.clone(),
                label: d.label,
                sample_predictions: probs
                    .iter()
                    .map(|p| DurationClass::from_index(argmax(p)).expect("three classes"))
                    .collect(),
                procedure_prediction: DurationClass::from_index(argmax(&mean))
                    .expect("three classes"),
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let mut rows = Vec::new();
    for &model in &config.models {
        let mut per_seed = Vec::new();
        let mut per_seed_procedure = Vec::new();
        for &seed in &config.seeds {
            let runs: Vec<&FoldScore> = folds
                .iter()
                .filter(|s| s.model == model && s.seed == seed)
                .collect();
            let (preds, labels): (Vec<DurationClass>, Vec<DurationClass>) = runs
                .iter()
                .flat_map(|s| s.sample_predictions.iter().map(move |&p| (p, s.label)))
                .unzip();
            per_seed.push(macro_f1(&preds, &labels)?);
            let proc_preds: Vec<DurationClass> =
                runs.iter().map(|s| s.procedure_prediction).collect();
            let proc_labels: Vec<DurationClass> = runs.iter().map(|s| s.label).collect();
            per_seed_procedure.push(macro_f1(&proc_preds, &proc_labels)?);
        }
        let (mean, std) = mean_std(&per_seed);
        let (procedure_mean, procedure_std) = mean_std(&per_seed_procedure);
        rows.push(ModelSummary {
            model,
            per_seed,
            mean,
            std,
            per_seed_procedure,
            procedure_mean,
            procedure_std,
        });
    }
    Ok(BenchmarkResult { rows, folds })
}

impl BenchmarkResult {
    pub fn row(&self, model: ModelKind) -> Option<&ModelSummary> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// `model,mean_macro_f1,std_macro_f1,procedure_mean_macro_f1,procedure_std_macro_f1`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "model,mean_macro_f1,std_macro_f1,procedure_mean_macro_f1,procedure_std_macro_f1\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.model, r.mean, r.std, r.procedure_mean, r.procedure_std
            );
        }
        out
    }

    /// One line per (model, seed) with the pooled sample-level macro-F1.
    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("model,seed,macro_f1,procedure_macro_f1\n");
        for r in &self.rows {
            let seeds = self
                .folds
                .iter()
                .filter(|f| f.model == r.model)
                .map(|f| f.seed);
            let seeds: Vec<u64> = seeds.collect::<BTreeSet<_>>().into_iter().collect();
            for (i, s) in seeds.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6}",
                    r.model, s, r.per_seed[i], r.per_seed_procedure[i]
                );
            }
        }
        out
    }

    /// Raw per-fold results: counts of sample predictions per class.
    pub fn folds_csv(&self) -> String {
        let mut out =
            String::from("model,seed,held_out_team,label,samples,predicted_slow,predicted_medium,predicted_fast,procedure_prediction\n");
        for f in &self.folds {
            let count = |c: DurationClass| f.sample_predictions.iter().filter(|&&p| p == c).count();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                f.model,
                f.seed,
                f.held_out_team,
                f.label,
                f.sample_predictions.len(),
                count(DurationClass::Slow),
                count(DurationClass::Medium),
                count(DurationClass::Fast),
                f.procedure_prediction
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyPoint {
    /// Percentage of the procedure's windows observed.
    pub percent: u32,
    /// Recall of the slow class over the given procedures.
    pub slow_recall: f64,
    /// Fraction of procedures classified correctly.
    pub accuracy: f64,
}

/// Number of windows visible after `percent` % of a `total`-window procedure.
pub fn early_window_count(total: usize, percent: u32) -> usize {
    ((total as f64 * f64::from(percent) / 100.0).ceil() as usize).clamp(1, total.max(1))
}

/// Procedure-level predictions from the first p % of windows,
/// p ∈ {10, 20, …, 100}, each paired with the procedure's true class.
pub fn early_predictions(
    procedures: &[(&ProcedureRecord, DurationClass)],
    checkpoint: &ModelCheckpoint,
    stride: usize,
) -> Result<Vec<(u32, Vec<(DurationClass, DurationClass)>)>, EvalError> {
    let snapshots: Vec<_> = procedures
        .iter()
        .map(|(r, _)| procedure_snapshots(r, &checkpoint.preprocessing))
        .collect();
    (1..=10)
        .map(|k| {
            let percent = k * 10;
            let pairs = procedures
                .iter()
                .zip(&snapshots)
                .map(|((r, label), snaps)| {
                    let n = early_window_count(snaps.len(), percent);
                    let p = predict_snapshots(&r.procedure_id, &snaps[..n], checkpoint, stride)?;
                    Ok((p.class, *label))
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok((percent, pairs))
        })
        .collect()
}

/// Slow-class recall and accuracy per observed percentage.
pub fn early_curve(predictions: &[(u32, Vec<(DurationClass, DurationClass)>)]) -> Vec<EarlyPoint> {
    predictions
        .iter()
        .map(|(percent, pairs)| {
            let slow: Vec<_> = pairs
                .iter()
                .filter(|(_, l)| *l == DurationClass::Slow)
                .collect();
            let slow_recall = if slow.is_empty() {
                0.0
            } else {
                slow.iter()
                    .filter(|(p, _)| *p == DurationClass::Slow)
                    .count() as f64
                    / slow.len() as f64
            };
            let accuracy =
                pairs.iter().filter(|(p, l)| p == l).count() as f64 / pairs.len().max(1) as f64;
            EarlyPoint {
                percent: *percent,
                slow_recall,
                accuracy,
            }
        })
        .collect()
}

/// Early-identification curve of one checkpoint on the given procedures.
pub fn early_identification(
    procedures: &[(&ProcedureRecord, DurationClass)],
    checkpoint: &ModelCheckpoint,
    stride: usize,
) -> Result<Vec<EarlyPoint>, EvalError> {
    Ok(early_curve(&early_predictions(
        procedures, checkpoint, stride,
    )?))
}

/// Leave-one-team-out early-identification: each held-out procedure is
/// judged by the model trained without its team.
pub fn early_identification_loto(
    records: &[ProcedureRecord],
    config: &BenchmarkConfig,
    model: ModelKind,
    seed: u64,
) -> Result<Vec<EarlyPoint>, EvalError> {
    let plan = FoldPlan::leave_one_team_out(records)?;
    let per_fold: Vec<Vec<(u32, Vec<(DurationClass, DurationClass)>)>> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let train_records = select(records, &fold.train);
            let test_records = select(records, &fold.test);
            let pre = fit_preprocessing(&train_records, config.window)?;
            let graphs = labelled_samples(&train_records, &pre, config.sampling)?;
            let prepared = prepare(&graphs, &pre, model)?;
            let train_config = TrainConfig {
                kind: model,
                seed: run_seed(model, seed, i),
                ..config.train.clone()
            };
            let (params, _) = train(&prepared, None, &train_config)?;
            let checkpoint = ModelCheckpoint {
                params,
                preprocessing: pre,
                config: train_config,
            };
            let labelled: Vec<(&ProcedureRecord, DurationClass)> = test_records
                .iter()
                .map(|r| (*r, checkpoint.preprocessing.boundaries.classify(r.duration)))
                .collect();
            early_predictions(&labelled, &checkpoint, 1)
        })
        .collect::<Result<_, EvalError>>()?;
    let merged: Vec<(u32, Vec<(DurationClass, DurationClass)>)> = (0..10)
        .map(|k| {
            let percent = per_fold[0][k].0;
            (
                percent,
                per_fold.iter().flat_map(|f| f[k].1.clone()).collect(),
            )
        })
        .collect();
    Ok(early_curve(&merged))
}

/// Number of sliding samples for a procedure with `windows` windows.
pub fn sample_count(windows: usize, stride: usize) -> usize {
    if windows == 0 {
        0
    } else if windows < SAMPLE_WINDOWS {
        1
    } else {
        (windows - SAMPLE_WINDOWS) / stride + 1
    }
}
