//! Dropout and batch normalization.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::tape::{column_stats, BatchStats, Normalize, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(TensorError::Config(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )))
    }
}

/// Inverted dropout mask: zeros with probability `p`, survivors scaled by `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Result<Tensor> {
    check_dropout(p)?;
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Ok(Tensor::matrix(rows, cols, data))
}

/// Identity in eval mode or when `p == 0`; otherwise applies a fresh mask.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    check_dropout(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let (r, c) = {
        let t = tape.value(x);
        (t.rows(), t.cols())
    };
    let mask = dropout_mask(r, c, p, rng)?;
    tape.mul_const(x, mask)
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Batch normalization with learnable scale/shift. One forward call is one
/// example, so normalization always uses the running statistics and the layer
/// is a per-feature affine map; in train mode the column statistics of the
/// rows are returned for the caller to fold in with [`BatchNorm::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, width));
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let stats = (mode == Mode::Train).then(|| column_stats(tape.value(x)));
        let norm = Normalize::Running {
            mean: &self.running_mean,
            var: &self.running_var,
        };
        let (v, _) = tape.batch_norm(x, g, b, norm, self.eps)?;
        Ok((v, stats))
    }

    pub fn update(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, s) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * s;
        }
        for (r, s) in self.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * s;
        }
    }
}
