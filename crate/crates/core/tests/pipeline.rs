use tegraph::counterfactual::{search_trace, CounterfactualEdit, SearchLevel, TopoKind};
use tegraph::datagen::{generate_corpus, Corpus, GeneratorConfig};
use tegraph::eval::sample_count;
use tegraph::ingest::{window_procedure, ProcedureRecord, WindowConfig};
use tegraph::model::{argmax, DurationClass, ModelCheckpoint, ModelError, ModelKind, TrainConfig};
use tegraph::pipeline::*;

fn corpus(noise: f64, seed: u64) -> Corpus {
    generate_corpus(&GeneratorConfig {
        noise,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn benchmark_train(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        kind,
        hidden: 16,
        depth: 3,
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 60,
        patience: 0,
        seed: 1,
    }
}

fn train_on(c: &Corpus, config: &TrainConfig) -> ModelCheckpoint {
    let records: Vec<&ProcedureRecord> = c.records.iter().collect();
    train_checkpoint(
        &records,
        &[],
        config,
        WindowConfig::default(),
        Sampling::default(),
    )
    .unwrap()
    .0
}

#[test]
fn training_twice_gives_identical_checkpoint_bytes() {
    let c = corpus(0.5, 7);
    let config = TrainConfig {
        max_epochs: 3,
        ..benchmark_train(ModelKind::TeGcn)
    };
    let a = train_on(&c, &config).to_bytes();
    let b = train_on(&c, &config).to_bytes();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tegraph");
    ModelCheckpoint::from_bytes(&a)
        .unwrap()
        .save(&path)
        .unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), a);
}

#[test]
fn procedure_prediction_averages_every_sample() {
    let c = corpus(0.5, 7);
    let ck = train_on(
        &c,
        &TrainConfig {
            max_epochs: 3,
            ..benchmark_train(ModelKind::SnapshotGcn)
        },
    );
    for r in &c.records[..3] {
        let windows = window_procedure(r).windows.len();
        let p = predict_procedure(r, &ck, 4).unwrap();
        assert_eq!(p.trace.len(), sample_count(windows, 4));
        for k in 0..3 {
            let mean =
                p.trace.iter().map(|s| s.probabilities[k]).sum::<f64>() / p.trace.len() as f64;
            assert!((mean - p.probabilities[k]).abs() < 1e-12);
        }
        assert_eq!(p.class.index(), argmax(&p.probabilities));
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn too_short_procedure_is_an_error() {
    let c = corpus(0.5, 7);
    let ck = train_on(
        &c,
        &TrainConfig {
            max_epochs: 1,
            ..benchmark_train(ModelKind::Mlp)
        },
    );
    let mut short = c.records[0].clone();
    short.duration = 5.0;
    short.speech_turns.retain(|t| t.end <= 5.0);
    short.frames.retain(|f| f.t <= 5.0);
    short.action_events.retain(|a| a.end <= 5.0);
    short.position_samples.retain(|p| p.t <= 5.0);
    assert!(matches!(
        predict_procedure(&short, &ck, 4),
        Err(PipelineError::Model(ModelError::TooShort))
    ));
}

#[test]
fn slow_predictions_flip_by_silencing_the_over_broadcasting_leader() {
    // mid noise: the non-leader speech cue has faded while the head
    // surgeon's broadcast rate still marks slow procedures
    let c = corpus(0.5, 7);
    let ck = train_on(&c, &benchmark_train(ModelKind::TeGcn));
    let fresh = corpus(0.5, 107);
    let (mut leader_removals, mut edits, mut graphs) = (0, 0, 0);
    for (r, planted) in fresh.records.iter().zip(&fresh.manifest.procedures) {
        if planted.planted_class != DurationClass::Slow {
            continue;
        }
        let samples = procedure_samples(
            r,
            &ck.preprocessing,
            Sampling {
                stride: 12,
                span: 12,
            },
            None,
        )
        .unwrap();
        for g in samples {
            if argmax(&ck.predict_graph(&g).unwrap()) != DurationClass::Slow.index() {
                continue;
            }
            graphs += 1;
            let result = search_trace(&g, &ck, SearchLevel::Topo, DurationClass::Medium).unwrap();
            for e in &result.edits {
                edits += 1;
                if let CounterfactualEdit::Topo(t) = e {
                    if t.kind == TopoKind::RemoveSpeech && t.member_id == planted.leader_id {
                        leader_removals += 1;
                    }
                }
            }
        }
    }
    assert!(graphs >= 3, "only {graphs} slow predictions");
    assert!(
        leader_removals * 4 >= edits * 3,
        "{leader_removals} of {edits} edits remove leader speech"
    );
}
