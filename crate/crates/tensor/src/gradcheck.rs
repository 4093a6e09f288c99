//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many coordinates per parameter (sampled); `None` checks all.
    pub max_coords_per_param: Option<usize>,
    /// Restrict the check to these parameters.
    pub params: Option<Vec<ParamId>>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coords_per_param: None,
            params: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the largest error.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub coordinates_checked: usize,
}

fn evaluate<F>(forward: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = forward(&mut tape, store)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(TensorError::Shape {
            op: "finite_diff_check",
            left: v.shape().to_vec(),
            right: vec![1, 1],
        });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(TensorError::NonFinite(format!("forward produced {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of the scalar produced by `forward` against
/// central differences. The error per coordinate is
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn finite_diff_check<F>(store: &ParamStore, mut forward: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = forward(&mut tape, store)?;
    if !tape.value(out).item().is_finite() {
        return Err(TensorError::NonFinite("forward produced a non-finite loss".into()));
    }
    let grads = tape.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    grads.accumulate_into(&tape, &mut analytic)?;

    let ids: Vec<ParamId> = match &opts.params {
        Some(ids) => ids.clone(),
        None => store.ids().collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        coordinates_checked: 0,
    };
    let eps = opts.epsilon;
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let original = store.value(id).data()[k];
            probe.get_mut(id).value.data_mut()[k] = original + eps;
            let plus = evaluate(&mut forward, &probe)?;
            probe.get_mut(id).value.data_mut()[k] = original - eps;
            let minus = evaluate(&mut forward, &probe)?;
            probe.get_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).grad.data()[k];
            let err = (a - numeric).abs() / numeric.abs().max(1e-8);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), k));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
