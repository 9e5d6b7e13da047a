//! Mini-batch training with Adam and class-weighted cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, DurationClass, ModelError, ModelKind, ModelParams, PreparedGraph, NUM_CLASSES};
use crate::tensor::{Tape, Tensor2, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    /// Number of propagation layers of the GCN kinds.
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping. Only used when
    /// a validation set is passed to [`train`].
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::TeGcn,
            hidden: 64,
            depth: 3,
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 500,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Weighted training loss of the initial parameters.
    pub initial_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
}

/// `N / (3 · n_c)` per class; classes without samples get weight 0.
pub fn class_weights(labels: &[DurationClass]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| {
        if c == 0 {
            0.0
        } else {
            n / (NUM_CLASSES as f64 * c as f64)
        }
    })
}

/// Adam with the usual defaults for β₁, β₂ and ε.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Tensor2> = params
            .tensors()
            .into_iter()
            .map(|t| Tensor2::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor2]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

fn targets_and_weights(
    batch: &Batch,
    weights: &[f64; NUM_CLASSES],
) -> Result<(Vec<usize>, Vec<f64>), ModelError> {
    batch
        .labels
        .iter()
        .map(|l| {
            let l = l.ok_or_else(|| ModelError::Format("training sample without label".into()))?;
            Ok((l.index(), weights[l.index()]))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().unzip())
}

/// Class-weighted mean cross-entropy of `params` on a labelled batch, with
/// gradients in [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &Batch,
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, Vec<Tensor2>), ModelError> {
    let (targets, sample_weights) = targets_and_weights(batch, weights)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let logits = params.forward_on_tape(&mut tape, &vars, batch)?;
    let loss = tape.softmax_cross_entropy(logits, &targets, &sample_weights)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| {
            grads
                .take(v)
                .unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols()))
        })
        .collect();
    Ok((value, grads))
}

/// Class-weighted mean cross-entropy without gradients.
pub fn weighted_loss(
    params: &ModelParams,
    batch: &Batch,
    weights: &[f64; NUM_CLASSES],
) -> Result<f64, ModelError> {
    let (targets, sample_weights) = targets_and_weights(batch, weights)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let logits = params.forward_on_tape(&mut tape, &vars, batch)?;
    let loss = tape.softmax_cross_entropy(logits, &targets, &sample_weights)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Trains a fresh model of `config.kind` on prepared graphs.
///
/// With a validation set the parameters of the epoch with the lowest
/// validation loss are returned and training stops after `patience` epochs
/// without improvement; otherwise the final parameters are returned.
pub fn train(
    samples: &[PreparedGraph],
    validation: Option<&[PreparedGraph]>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), ModelError> {
    let labels: Vec<DurationClass> = samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| ModelError::Format("training sample without label".into()))
        })
        .collect::<Result<_, _>>()?;
    for class in DurationClass::ALL {
        if !labels.contains(&class) {
            return Err(ModelError::DegenerateSplit(class));
        }
    }
    let weights = class_weights(&labels);
    let input = samples[0].width;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.kind, input, config.hidden, config.depth, &mut rng);
    let mut adam = Adam::new(&params, config.learning_rate);

    let all: Vec<&PreparedGraph> = samples.iter().collect();
    let initial_loss = weighted_loss(&params, &Batch::from_prepared(&all, config.kind)?, &weights)?;
    let validation_batch = match validation {
        Some(v) if !v.is_empty() => Some(Batch::from_prepared(
            &v.iter().collect::<Vec<_>>(),
            config.kind,
        )?),
        _ => None,
    };

    let mut report = TrainReport {
        initial_loss,
        epoch_losses: Vec::new(),
        validation_losses: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, params.clone());
    if let Some(vb) = &validation_batch {
        best.0 = weighted_loss(&params, vb, &weights)?;
    }
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch_size = config.batch_size.max(1);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let members: Vec<&PreparedGraph> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_prepared(&members, config.kind)?;
            let (loss, grads) = loss_and_gradients(&params, &batch, &weights)?;
            adam.update(&mut params, &grads);
            total += loss;
            batches += 1;
        }
        report.epoch_losses.push(total / batches as f64);

        if let Some(vb) = &validation_batch {
            let v = weighted_loss(&params, vb, &weights)?;
            report.validation_losses.push(v);
            if v < best.0 {
                best = (v, params.clone());
                report.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if validation_batch.is_some() {
        params = best.1;
    } else {
        report.best_epoch = report.epoch_losses.len();
    }
    Ok((params, report))
}
