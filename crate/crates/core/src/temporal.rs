//! Attentive bidirectional GRU encoder and the feed-forward prediction head.

use epiwatch_tensor::{
    dropout, Activation, BatchNorm, BatchStats, Mode, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};
use rand::Rng;

use crate::config::Combine;
use crate::dgnn::glorot;
use crate::error::{Error, Result};

/// Weights of one GRU direction: input (`W`), recurrent (`U`) and bias per gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruDirection {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruDirection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut gate = |g: &str| {
            (
                store.add(format!("{name}.w_{g}"), glorot(input, hidden, rng)),
                store.add(format!("{name}.u_{g}"), glorot(hidden, hidden, rng)),
                store.add(format!("{name}.b_{g}"), Tensor::zeros(1, hidden)),
            )
        };
        let (w_z, u_z, b_z) = gate("z");
        let (w_r, u_r, b_r) = gate("r");
        let (w_h, u_h, b_h) = gate("h");
        GruDirection {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input,
            hidden,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }
}

fn gate(tape: &mut Tape, store: &ParamStore, x: Var, h: Var, (w, u, b): (ParamId, ParamId, ParamId)) -> Result<Var> {
    let w = tape.param(store, w);
    let u = tape.param(store, u);
    let b = tape.param(store, b);
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    Ok(tape.add_row(s, b)?)
}

/// One GRU step for a batch of rows:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `h̃ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1-z)⊙h + z⊙h̃`.
pub fn gru_cell(tape: &mut Tape, store: &ParamStore, dir: &GruDirection, x: Var, h: Var) -> Result<Var> {
    let (tx, th) = (tape.value(x), tape.value(h));
    if tx.cols() != dir.input || th.cols() != dir.hidden || tx.rows() != th.rows() {
        return Err(TensorError::Shape {
            op: "gru_cell",
            left: tx.shape().to_vec(),
            right: th.shape().to_vec(),
        }
        .into());
    }
    let z = gate(tape, store, x, h, (dir.w_z, dir.u_z, dir.b_z))?;
    let z = tape.activation(z, Activation::Sigmoid);
    let r = gate(tape, store, x, h, (dir.w_r, dir.u_r, dir.b_r))?;
    let r = tape.activation(r, Activation::Sigmoid);
    let rh = tape.mul(r, h)?;
    let cand = gate(tape, store, x, rh, (dir.w_h, dir.u_h, dir.b_h))?;
    let cand = tape.activation(cand, Activation::Tanh);
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(z, diff)?;
    Ok(tape.add(h, step)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: GruDirection,
    pub backward: GruDirection,
    pub combine: Combine,
    /// Context vector scoring each combined state.
    pub context: ParamId,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        combine: Combine,
        rng: &mut R,
    ) -> Self {
        let forward = GruDirection::new(store, "gru.forward", input, hidden, rng);
        let backward = GruDirection::new(store, "gru.backward", input, hidden, rng);
        let width = match combine {
            Combine::Concat => 2 * hidden,
            Combine::Sum => hidden,
        };
        let context = store.add("pool.context", glorot(width, 1, rng));
        BiGru {
            forward,
            backward,
            combine,
            context,
        }
    }

    pub fn output_width(&self) -> usize {
        match self.combine {
            Combine::Concat => 2 * self.forward.hidden,
            Combine::Sum => self.forward.hidden,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// `rows × width` pooled context per sequence.
    pub pooled: Var,
    /// `rows × T` attention over time steps.
    pub beta: Var,
    /// Combined states per step.
    pub states: Vec<Var>,
}

fn combine_states(tape: &mut Tape, how: Combine, backward: Var, forward: Var) -> Result<Var> {
    Ok(match how {
        Combine::Concat => tape.concat_cols(&[backward, forward])?,
        Combine::Sum => tape.add(backward, forward)?,
    })
}

/// Runs both directions from zero states over `steps` (each `rows × input`,
/// chronological) and pools the combined states with softmax attention.
pub fn encode_sequence(tape: &mut Tape, store: &ParamStore, gru: &BiGru, steps: &[Var]) -> Result<Encoded> {
    let Some(&first) = steps.first() else {
        return Err(Error::Config("cannot encode an empty sequence".into()));
    };
    let rows = tape.value(first).rows();
    let hidden = gru.forward.hidden;
    let mut fwd = Vec::with_capacity(steps.len());
    let mut h = tape.constant(Tensor::zeros(rows, hidden));
    for &x in steps {
        h = gru_cell(tape, store, &gru.forward, x, h)?;
        fwd.push(h);
    }
    let mut bwd = vec![h; steps.len()];
    let mut h = tape.constant(Tensor::zeros(rows, hidden));
    for (t, &x) in steps.iter().enumerate().rev() {
        h = gru_cell(tape, store, &gru.backward, x, h)?;
        bwd[t] = h;
    }
    let states = bwd
        .into_iter()
        .zip(fwd)
        .map(|(b, f)| combine_states(tape, gru.combine, b, f))
        .collect::<Result<Vec<_>>>()?;
    let u = tape.param(store, gru.context);
    let scores = states
        .iter()
        .map(|&s| tape.matmul(s, u))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let scores = tape.concat_cols(&scores)?;
    let beta = tape.softmax_rows(scores);
    let mut pooled: Option<Var> = None;
    for (t, &s) in states.iter().enumerate() {
        let b = tape.select_col(beta, t)?;
        let term = tape.mul_col(s, b)?;
        pooled = Some(match pooled {
            None => term,
            Some(p) => tape.add(p, term)?,
        });
    }
    Ok(Encoded {
        pooled: pooled.expect("non-empty"),
        beta,
        states,
    })
}

/// Element-wise mean of the step inputs.
pub fn mean_pool(tape: &mut Tape, steps: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = steps.split_first() else {
        return Err(Error::Config("cannot pool an empty sequence".into()));
    };
    let mut acc = first;
    for &s in rest {
        acc = tape.add(acc, s)?;
    }
    Ok(tape.scale(acc, 1.0 / steps.len() as f64))
}

/// Two affine layers ending in one scalar per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl PredictHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        activation: Activation,
        batch_norm: bool,
        rng: &mut R,
    ) -> Self {
        let w1 = store.add("head.w1", glorot(input, hidden, rng));
        let b1 = store.add("head.b1", Tensor::zeros(1, hidden));
        let w2 = store.add("head.w2", glorot(hidden, 1, rng));
        let b2 = store.add("head.b2", Tensor::zeros(1, 1));
        let norm = batch_norm.then(|| BatchNorm::new(store, "head.norm", hidden));
        PredictHead {
            w1,
            b1,
            w2,
            b2,
            norm,
            activation,
        }
    }

    /// Unclamped predictions (`rows × 1`) plus batch statistics of the hidden
    /// layer in train mode when batch normalization is on.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        v: Var,
        mode: Mode,
        dropout_p: f64,
        rng: &mut R,
    ) -> Result<(Var, Option<BatchStats>)> {
        let w1 = tape.param(store, self.w1);
        let mut h = tape.matmul(v, w1)?;
        let b1 = tape.param(store, self.b1);
        h = tape.add_row(h, b1)?;
        let mut stats = None;
        if let Some(bn) = &self.norm {
            let (out, s) = bn.forward(tape, store, h, mode)?;
            h = out;
            stats = s;
        }
        let h = tape.activation(h, self.activation);
        let h = dropout(tape, h, dropout_p, mode, rng)?;
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let y = tape.matmul(h, w2)?;
        Ok((tape.add_row(y, b2)?, stats))
    }
}

/// Reported predictions are never negative.
pub fn clamp_non_negative(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.max(0.0)).collect()
}
