//! Minibatch training with Adam, gradient clipping and early stopping.

use std::rc::Rc;

use epiwatch_tensor::{Adam, AdamConfig, Mode, Tape};
use rand::seq::SliceRandom;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::model::{seeded_stream, Forecaster, DROPOUT_STREAM, SHUFFLE_STREAM};

/// A window paired with raw per-location targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub sample: Rc<WindowSample>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, in model (normalized) units.
    pub train_loss: f64,
    pub validation_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_mae: f64,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_mae\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.validation_mae));
        }
        out
    }
}

/// Mean absolute error of clamped predictions over all examples and locations.
pub fn mean_abs_error(model: &Forecaster, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples {
        let pred = model.predict(&ex.sample)?;
        for (p, y) in pred.iter().zip(&ex.targets) {
            total += (p - y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no examples to score".into()));
    }
    Ok(total / n as f64)
}

/// Inference-mode loss over `examples`, in model units.
pub fn mean_loss(model: &Forecaster, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let mut rng = seeded_stream(0, DROPOUT_STREAM);
        let fwd = model.forward(&mut tape, &model.store, &ex.sample, Mode::Eval, &mut rng)?;
        let y = tape.constant(model.scale_targets(&ex.targets));
        let loss = tape.mse(fwd.prediction, y)?;
        total += tape.value(loss).item();
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Trains `model` in place and leaves it at the parameters with the lowest
/// validation error. Validation examples never contribute gradients.
pub fn train(model: &mut Forecaster, train_set: &[Example], validation: &[Example], seed: u64) -> Result<TrainTrace> {
    if train_set.is_empty() {
        return Err(Error::Coverage("no training examples".into()));
    }
    if validation.is_empty() {
        return Err(Error::Coverage("no validation examples".into()));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut dropout_rng = seeded_stream(seed, DROPOUT_STREAM);
    let mut shuffle_rng = seeded_stream(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = TrainTrace {
        best_validation_mae: f64::INFINITY,
        ..TrainTrace::default()
    };
    let mut best: Option<Forecaster> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grad();
            let mut stats = Vec::new();
            for &i in batch {
                let ex = &train_set[i];
                let mut tape = Tape::new();
                let fwd = model.forward(&mut tape, &model.store, &ex.sample, Mode::Train, &mut dropout_rng)?;
                let y = tape.constant(model.scale_targets(&ex.targets));
                let loss = tape.mse(fwd.prediction, y)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        lr: cfg.learning_rate,
                        detail: format!("loss became {value}"),
                    });
                }
                loss_sum += value;
                tape.backward(loss)?.accumulate_into(&tape, &mut model.store)?;
                stats.extend(fwd.norm_stats);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            let norm = model.store.clip_grad_norm(cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    lr: cfg.learning_rate,
                    detail: format!("gradient norm became {norm}"),
                });
            }
            adam.step(&mut model.store);
            model.update_norms(&stats);
        }
        if !model.store.all_finite() {
            return Err(Error::Divergence {
                epoch,
                lr: cfg.learning_rate,
                detail: "parameters became non-finite".into(),
            });
        }
        let validation_mae = mean_abs_error(model, validation)?;
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_mae,
        });
        if validation_mae < trace.best_validation_mae {
            trace.best_validation_mae = validation_mae;
            trace.best_epoch = epoch;
            best = Some(model.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    if let Some(mut b) = best {
        // keep the version moving forward so stale attention records stay detectable
        b.store.bump_version();
        while b.store.version() <= model.store.version() {
            b.store.bump_version();
        }
        *model = b;
    }
    Ok(trace)
}
