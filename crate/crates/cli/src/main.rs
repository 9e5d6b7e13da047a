use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tegraph::counterfactual::{
    search_trace, sensitivity_curve, CounterfactualResult, SearchLevel, SensitivityCurve,
};
use tegraph::datagen::{generate_corpus, GeneratorConfig};
use tegraph::eval::{early_identification_loto, run_benchmark, BenchmarkConfig};
use tegraph::graph::{expand, TimeExpandedGraph, SAMPLE_WINDOWS};
use tegraph::ingest::{load_procedure, ProcedureRecord};
use tegraph::model::{argmax, DurationClass, ModelCheckpoint, ModelKind, TrainConfig};
use tegraph::pipeline::{
    predict_procedure, procedure_samples, procedure_snapshots, train_checkpoint, Sampling,
};
use tegraph_service::{AppState, DEFAULT_IDLE_TIMEOUT};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "tegraph",
    version,
    about = "Team interaction graphs, duration prediction and counterfactuals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted team-behavior effects.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// JSON file with generator settings; `--seed` and `--noise` override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model on every procedure of a corpus directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "te_gcn")]
        model: ModelKind,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Procedure-level prediction (mean of sliding-sample probabilities).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        procedure: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Counterfactual report for one window range of a procedure.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        procedure: PathBuf,
        #[arg(long, default_value = "topo")]
        level: SearchLevel,
        /// Defaults to the class one step faster than the prediction.
        #[arg(long)]
        target: Option<DurationClass>,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Leave-one-team-out benchmark; writes summary, per-seed and per-fold CSVs.
    Benchmark {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "mlp,snapshot_gcn,te_gcn")]
        models: Vec<ModelKind>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Sensitivity curve over every sample of a corpus predicted as `source`.
    Sensitivity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "feature")]
        level: SearchLevel,
        #[arg(long, default_value = "slow")]
        source: DurationClass,
        #[arg(long, default_value_t = SAMPLE_WINDOWS)]
        stride: usize,
        /// Write the curve as TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-team-out early identification from the first p % of windows.
    Early {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "te_gcn")]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run the what-if HTTP service.
    Serve {
        /// Directory of `*.tegraph` checkpoints; ids are file stems.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, env = "TEGRAPH_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Static files served under /ui/.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_IDLE_TIMEOUT.as_secs() / 60)]
        idle_minutes: u64,
    },
    /// Print the time-expanded graph of a window range as JSON.
    DumpGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        procedure: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Training sample stride in windows.
    #[arg(long, default_value_t = 4)]
    stride: usize,
}

impl TrainArgs {
    fn config(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            kind,
            hidden: self.hidden,
            depth: self.depth,
            learning_rate: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: 0,
            seed,
        }
    }

    fn sampling(&self) -> Sampling {
        Sampling {
            stride: self.stride,
            span: SAMPLE_WINDOWS,
        }
    }

    fn benchmark(&self, models: Vec<ModelKind>, seeds: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            models,
            seeds: (0..seeds).collect(),
            train: self.config(ModelKind::TeGcn, 0),
            sampling: self.sampling(),
            ..BenchmarkConfig::default()
        }
    }
}

#[derive(Args, Clone, Copy)]
struct RangeArgs {
    #[arg(long, default_value_t = 0)]
    window_start: usize,
    #[arg(long, default_value_t = SAMPLE_WINDOWS)]
    window_count: usize,
}

/// Every `*.jsonl` procedure in `dir`, ordered by file name.
fn load_corpus(dir: &Path) -> Result<Vec<ProcedureRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    if paths.is_empty() {
        bail!("no .jsonl procedures in {}", dir.display());
    }
    paths.iter().map(|p| load_record(p)).collect()
}

fn load_record(path: &Path) -> Result<ProcedureRecord> {
    load_procedure(path).with_context(|| format!("loading procedure {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn window_graph(
    record: &ProcedureRecord,
    ck: &ModelCheckpoint,
    range: RangeArgs,
) -> Result<TimeExpandedGraph> {
    let snapshots = procedure_snapshots(record, &ck.preprocessing);
    let end = range.window_start + range.window_count;
    if range.window_count == 0 || end > snapshots.len() {
        bail!(
            "windows [{}, {end}) outside the procedure's {} windows",
            range.window_start,
            snapshots.len()
        );
    }
    Ok(expand(
        &record.procedure_id,
        &snapshots[range.window_start..end],
    )?)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct ExplainReport {
    procedure_id: String,
    window_range: (usize, usize),
    baseline: [f64; 3],
    predicted_class: DurationClass,
    result: CounterfactualResult,
    /// Absent when the prediction is already the fastest class.
    sensitivity: Option<SensitivityCurve>,
}

fn write_file(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            seed,
            noise,
            config,
        } => {
            let base = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => GeneratorConfig::default(),
            };
            let corpus = generate_corpus(&GeneratorConfig {
                seed,
                noise,
                ..base
            })?;
            corpus.save(&out)?;
            eprintln!(
                "wrote {} procedures to {}",
                corpus.records.len(),
                out.display()
            );
        }
        Command::Train {
            corpus,
            out,
            model,
            train,
            seed,
        } => {
            let records = load_corpus(&corpus)?;
            let refs: Vec<&ProcedureRecord> = records.iter().collect();
            let config = train.config(model, seed);
            let (ck, report) =
                train_checkpoint(&refs, &[], &config, Default::default(), train.sampling())?;
            ck.save(&out)?;
            eprintln!(
                "trained {model} for {} epochs, final loss {:.4}; wrote {}",
                report.epoch_losses.len(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Predict {
            checkpoint,
            procedure,
            stride,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let record = load_record(&procedure)?;
            print_json(&predict_procedure(&record, &ck, stride)?)?;
        }
        Command::Explain {
            checkpoint,
            procedure,
            level,
            target,
            range,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let record = load_record(&procedure)?;
            let g = window_graph(&record, &ck, range)?;
            let baseline = ck.predict_graph(&g)?;
            let predicted = DurationClass::from_index(argmax(&baseline)).expect("three classes");
            let target = match target.or(predicted.faster()) {
                Some(t) => t,
                None => bail!("prediction is already {predicted}; pass --target"),
            };
            let result = search_trace(&g, &ck, level, target)?;
            let sensitivity = match predicted.faster() {
                Some(_) => Some(sensitivity_curve(
                    std::slice::from_ref(&g),
                    &ck,
                    level,
                    predicted,
                )?),
                None => None,
            };
            print_json(&ExplainReport {
                procedure_id: record.procedure_id,
                window_range: g.window_range,
                baseline,
                predicted_class: predicted,
                result,
                sensitivity,
            })?;
        }
        Command::Benchmark {
            corpus,
            out,
            models,
            seeds,
            train,
        } => {
            let records = load_corpus(&corpus)?;
            let result = run_benchmark(&records, &train.benchmark(models, seeds))?;
            fs::create_dir_all(&out)?;
            write_file(out.join("summary.csv"), &result.summary_csv())?;
            write_file(out.join("per_seed.csv"), &result.per_seed_csv())?;
            write_file(out.join("folds.csv"), &result.folds_csv())?;
            print!("{}", result.summary_csv());
        }
        Command::Sensitivity {
            checkpoint,
            corpus,
            level,
            source,
            stride,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let sampling = Sampling {
                stride,
                span: SAMPLE_WINDOWS,
            };
            let mut graphs = Vec::new();
            for r in load_corpus(&corpus)? {
                graphs.extend(procedure_samples(&r, &ck.preprocessing, sampling, None)?);
            }
            let curve = sensitivity_curve(&graphs, &ck, level, source)?;
            eprintln!(
                "{} graphs predicted {source}; gain at 10%: {:.4} of total {:.4}",
                curve.graphs,
                curve.gain_at(0.1),
                curve.total_gain()
            );
            match out {
                Some(p) => write_file(p, &curve.to_tsv())?,
                None => print!("{}", curve.to_tsv()),
            }
        }
        Command::Early {
            corpus,
            model,
            seed,
            train,
        } => {
            let records = load_corpus(&corpus)?;
            let config = train.benchmark(vec![model], 1);
            let curve = early_identification_loto(&records, &config, model, seed)?;
            println!("percent\tslow_recall\taccuracy");
            for p in curve {
                println!("{}\t{:.4}\t{:.4}", p.percent, p.slow_recall, p.accuracy);
            }
        }
        Command::Serve {
            checkpoints,
            addr,
            static_dir,
            idle_minutes,
        } => {
            let state = AppState::load_dir(&checkpoints, Duration::from_secs(idle_minutes * 60))?;
            if state.checkpoint_ids().is_empty() {
                log::warn!("no checkpoints found in {}", checkpoints.display());
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tegraph_service::serve(listener, Arc::new(state), static_dir).await
            })?;
        }
        Command::DumpGraph {
            checkpoint,
            procedure,
            range,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let record = load_record(&procedure)?;
            let g = window_graph(&record, &ck, range)?;
            print_json(&g.dump(Some(&ck.preprocessing.thresholds)))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
