//! Elementwise activations and the neighborhood softmax, independent of the tape.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Elu,
    Relu,
    Identity,
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if slope > 0.0 && slope < 1.0 {
            Ok(Activation::LeakyRelu(slope))
        } else {
            Err(TensorError::Config(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )))
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and the output `y = f(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_tensor(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Elu => f.write_str("elu"),
            Activation::Relu => f.write_str("relu"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = TensorError;

    /// Accepts `sigmoid`, `tanh`, `elu`, `relu`, `identity`, `leaky_relu` and
    /// `leaky_relu:<slope>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(slope) = s.strip_prefix("leaky_relu:") {
            let slope: f64 = slope
                .parse()
                .map_err(|_| TensorError::Config(format!("bad leaky_relu slope `{slope}`")))?;
            return Activation::leaky_relu(slope);
        }
        match s {
            "leaky_relu" => Ok(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(TensorError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax restricted to `mask`. Positions outside the mask are exactly zero.
pub fn masked_softmax(scores: &[f64], mask: &[usize]) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(TensorError::EmptyNeighborhood(
            "masked_softmax called with an empty mask".into(),
        ));
    }
    let mut out = vec![0.0; scores.len()];
    for &i in mask {
        if i >= scores.len() {
            return Err(TensorError::Config(format!(
                "mask index {i} out of range for {} scores",
                scores.len()
            )));
        }
    }
    let max = mask.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in mask {
        let e = (scores[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in mask {
        out[i] /= total;
    }
    Ok(out)
}

/// Softmax over a contiguous slice, in place.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_branches() {
        let act = Activation::leaky_relu(0.2).unwrap();
        assert_eq!(act.apply(3.0), 3.0);
        assert!((act.apply(-1.0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("swish".parse::<Activation>(), Err(TensorError::Config(_))));
        assert!(Activation::leaky_relu(1.5).is_err());
        assert!("leaky_relu:0".parse::<Activation>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for a in [
            Activation::LeakyRelu(0.2),
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Elu,
            Activation::Relu,
            Activation::Identity,
        ] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
    }

    #[test]
    fn masked_softmax_examples() {
        assert_eq!(masked_softmax(&[0.0, 0.0], &[0, 1]).unwrap(), vec![0.5, 0.5]);
        let p = masked_softmax(&[2f64.ln(), 0.0], &[0, 1]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(masked_softmax(&[4.2], &[0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn masked_softmax_zero_outside_mask() {
        let p = masked_softmax(&[1.0, 50.0, -3.0, 2.0], &[0, 2, 3]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_is_stable_for_large_scores() {
        let p = masked_softmax(&[1000.0, 999.0], &[0, 1]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(matches!(
            masked_softmax(&[1.0], &[]),
            Err(TensorError::EmptyNeighborhood(_))
        ));
    }
}
