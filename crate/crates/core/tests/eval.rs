use tegraph::datagen::{generate_corpus, GeneratorConfig};
use tegraph::eval::*;
use tegraph::ingest::{ProcedureRecord, WindowConfig};
use tegraph::model::{DurationClass, ModelKind, TrainConfig};
use tegraph::pipeline::{fit_preprocessing, predict_procedure, train_checkpoint, Sampling};

use DurationClass::{Fast, Medium, Slow};

fn from_confusion(confusion: [[usize; 3]; 3]) -> (Vec<DurationClass>, Vec<DurationClass>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (l, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                labels.push(DurationClass::ALL[l]);
                preds.push(DurationClass::ALL[p]);
            }
        }
    }
    (preds, labels)
}

#[test]
fn macro_f1_of_perfect_predictions_is_one() {
    let labels = vec![Slow, Medium, Medium, Fast];
    assert_eq!(macro_f1(&labels, &labels).unwrap(), 1.0);
}

#[test]
fn macro_f1_matches_hand_computed_confusion() {
    // per-class F1: 2·2/(2+2) = 1, 2·3/(4+4) = 3/4, 2·2/(3+3) = 2/3
    let (p, l) = from_confusion([[2, 0, 0], [0, 3, 1], [0, 1, 2]]);
    assert_eq!(confusion_matrix(&p, &l), [[2, 0, 0], [0, 3, 1], [0, 1, 2]]);
    assert!((macro_f1(&p, &l).unwrap() - 29.0 / 36.0).abs() < 1e-15);
}

#[test]
fn all_medium_predictor_scores_medium_f1_over_three() {
    let labels: Vec<_> = [Slow; 2]
        .into_iter()
        .chain([Medium; 10])
        .chain([Fast; 2])
        .collect();
    let preds = vec![Medium; 14];
    // F1_medium = 2·10/(14 + 10)
    assert!((macro_f1(&preds, &labels).unwrap() - (20.0 / 24.0) / 3.0).abs() < 1e-15);
}

#[test]
fn macro_f1_input_errors() {
    assert!(matches!(macro_f1(&[], &[]), Err(EvalError::EmptyInput)));
    assert!(matches!(
        macro_f1(&[Slow], &[Slow, Fast]),
        Err(EvalError::LengthMismatch { .. })
    ));
}

#[test]
fn absent_class_contributes_zero() {
    let labels = vec![Slow, Medium];
    assert!((macro_f1(&labels, &labels).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

fn corpus(noise: f64) -> Vec<ProcedureRecord> {
    generate_corpus(&GeneratorConfig {
        noise,
        ..GeneratorConfig::default()
    })
    .unwrap()
    .records
}

#[test]
fn fold_plan_holds_out_each_team_once() {
    let records = corpus(0.5);
    let plan = FoldPlan::leave_one_team_out(&records).unwrap();
    assert_eq!(plan.folds.len(), 14);
    let mut held: Vec<_> = plan.folds.iter().map(|f| f.held_out_team.clone()).collect();
    held.dedup();
    assert_eq!(held.len(), 14);
    for fold in &plan.folds {
        let team_of = |id: &String| {
            records
                .iter()
                .find(|r| &r.procedure_id == id)
                .unwrap()
                .team_id
                .clone()
        };
        assert!(fold.test.iter().all(|id| team_of(id) == fold.held_out_team));
        assert!(fold
            .train
            .iter()
            .all(|id| team_of(id) != fold.held_out_team));
        assert_eq!(fold.train.len() + fold.test.len(), records.len());
    }
    plan.check_stratification(&records).unwrap();
}

fn renamed(r: &ProcedureRecord, team: &str, duration: f64) -> ProcedureRecord {
    ProcedureRecord {
        procedure_id: format!("p-{team}"),
        team_id: team.into(),
        duration,
        ..r.clone()
    }
}

#[test]
fn stratification_failures_are_reported() {
    let base = &corpus(0.5)[0];
    let records = vec![
        renamed(base, "a", 600.0),
        renamed(base, "b", 610.0),
        renamed(base, "c", 900.0),
    ];
    let plan = FoldPlan::leave_one_team_out(&records).unwrap();
    assert!(matches!(
        plan.check_stratification(&records),
        Err(EvalError::DegenerateSplit { .. })
    ));
    assert!(matches!(
        FoldPlan::leave_one_team_out(&records[..1]),
        Err(EvalError::TooFewTeams(1))
    ));
}

#[test]
fn fitted_state_never_sees_the_held_out_team() {
    let records = corpus(0.5);
    let plan = FoldPlan::leave_one_team_out(&records).unwrap();
    let mut fitted = Vec::new();
    for fold in &plan.folds {
        let train: Vec<&ProcedureRecord> = records
            .iter()
            .filter(|r| fold.train.contains(&r.procedure_id))
            .collect();
        let pre = fit_preprocessing(&train, WindowConfig::default()).unwrap();
        // corrupting the held-out team leaves the fold's fitted state unchanged
        let mut corrupted = records.clone();
        for r in corrupted
            .iter_mut()
            .filter(|r| r.team_id == fold.held_out_team)
        {
            r.duration *= 3.0;
            r.frames.iter_mut().for_each(|f| f.loudness += 10.0);
        }
        let train2: Vec<&ProcedureRecord> = corrupted
            .iter()
            .filter(|r| fold.train.contains(&r.procedure_id))
            .collect();
        assert_eq!(
            fit_preprocessing(&train2, WindowConfig::default()).unwrap(),
            pre
        );
        fitted.push(pre);
    }
    for i in 0..fitted.len() {
        for j in i + 1..fitted.len() {
            assert_ne!(fitted[i].boundaries, fitted[j].boundaries);
            assert_ne!(fitted[i].normalizer, fitted[j].normalizer);
        }
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        depth: 2,
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 2,
        patience: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoints_differ_across_folds() {
    let records = corpus(0.5);
    let plan = FoldPlan::leave_one_team_out(&records).unwrap();
    let bytes: Vec<Vec<u8>> = plan.folds[..3]
        .iter()
        .map(|fold| {
            let train: Vec<&ProcedureRecord> = records
                .iter()
                .filter(|r| fold.train.contains(&r.procedure_id))
                .collect();
            let (ck, _) = train_checkpoint(
                &train,
                &[],
                &tiny_train(),
                WindowConfig::default(),
                Sampling::default(),
            )
            .unwrap();
            ck.to_bytes()
        })
        .collect();
    assert_ne!(bytes[0], bytes[1]);
    assert_ne!(bytes[1], bytes[2]);
}

#[test]
fn benchmark_is_deterministic() {
    let records = corpus(0.5);
    let config = BenchmarkConfig {
        models: vec![ModelKind::Mlp, ModelKind::TeGcn],
        seeds: vec![0, 1],
        train: tiny_train(),
        ..BenchmarkConfig::default()
    };
    let a = run_benchmark(&records, &config).unwrap();
    let b = run_benchmark(&records, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(a.folds.len(), 2 * 2 * 14);
    assert_eq!(a.per_seed_csv().lines().count(), 1 + 2 * 2);
    assert_eq!(a.folds_csv().lines().count(), 1 + 2 * 2 * 14);
    for row in &a.rows {
        let (m, s) = mean_std(&row.per_seed);
        assert_eq!((m, s), (row.mean, row.std));
    }
}

#[test]
fn mean_std_uses_sample_deviation() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
}

#[test]
fn early_window_counts_round_up() {
    assert_eq!(early_window_count(45, 10), 5);
    assert_eq!(early_window_count(40, 10), 4);
    assert_eq!(early_window_count(7, 10), 1);
    assert_eq!(early_window_count(45, 100), 45);
    assert_eq!(early_window_count(45, 50), 23);
}

#[test]
fn early_prediction_at_full_length_equals_procedure_prediction() {
    let records = corpus(0.5);
    let train: Vec<&ProcedureRecord> = records.iter().skip(2).collect();
    let (ck, _) = train_checkpoint(
        &train,
        &[],
        &tiny_train(),
        WindowConfig::default(),
        Sampling::default(),
    )
    .unwrap();
    let held: Vec<(&ProcedureRecord, DurationClass)> = records[..2]
        .iter()
        .map(|r| (r, ck.preprocessing.boundaries.classify(r.duration)))
        .collect();
    let curve = early_predictions(&held, &ck, 1).unwrap();
    assert_eq!(curve.len(), 10);
    assert_eq!(curve.last().unwrap().0, 100);
    for ((r, _), (pred, _)) in held.iter().zip(&curve.last().unwrap().1) {
        assert_eq!(predict_procedure(r, &ck, 1).unwrap().class, *pred);
    }
}

#[test]
fn te_gcn_identifies_slow_procedures_early_at_least_as_well_as_mlp() {
    let records = corpus(0.5);
    let config = BenchmarkConfig::default();
    let te = early_identification_loto(&records, &config, ModelKind::TeGcn, 0).unwrap();
    let mlp = early_identification_loto(&records, &config, ModelKind::Mlp, 0).unwrap();
    let at = |c: &[EarlyPoint]| c.iter().find(|p| p.percent == 50).unwrap().slow_recall;
    assert!(at(&te) >= at(&mlp), "te {} < mlp {}", at(&te), at(&mlp));
}
