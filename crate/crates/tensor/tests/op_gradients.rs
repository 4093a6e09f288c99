//! Every differentiable tape op against central differences, over several seeds.

use std::rc::Rc;

use epiwatch_tensor::{
    finite_diff_check, Activation, GradCheckOptions, Normalize, ParamId, ParamStore, Result, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const TOLERANCE: f64 = 1e-4;

/// Uniform magnitudes in [0.1, 1] with random sign, away from activation kinks.
fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Reduces `out` to a scalar with fixed random weights so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

struct Case {
    store: ParamStore,
    ids: Vec<ParamId>,
    rng: ChaCha8Rng,
}

impl Case {
    fn new(seed: u64, shapes: &[(usize, usize)]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("p{i}"), random(&mut rng, r, c)))
            .collect();
        Case { store, ids, rng }
    }

    fn weights(&mut self, rows: usize, cols: usize) -> Tensor {
        random(&mut self.rng, rows, cols)
    }

    fn check<F>(&self, label: &str, seed: u64, mut op: F)
    where
        F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    {
        let ids = self.ids.clone();
        let report = finite_diff_check(
            &self.store,
            |tape, s| {
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
                op(tape, &vars)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(
            report.max_rel_error < TOLERANCE,
            "{label} seed {seed}: relative error {:.3e} at {:?} (analytic, numeric) = {:?}",
            report.max_rel_error,
            report.worst,
            report.worst_values
        );
    }
}

fn binary(label: &str, rows: usize, cols: usize, f: fn(&mut Tape, Var, Var) -> Result<Var>) {
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(rows, cols), (rows, cols)]);
        let w = case.weights(rows, cols);
        case.check(label, seed, |t, v| {
            let out = f(t, v[0], v[1])?;
            weighted_sum(t, out, &w)
        });
    }
}

#[test]
fn elementwise_binary_ops() {
    binary("add", 3, 4, |t, a, b| t.add(a, b));
    binary("sub", 3, 4, |t, a, b| t.sub(a, b));
    binary("mul", 3, 4, |t, a, b| t.mul(a, b));
}

#[test]
fn matmul() {
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(3, 4), (4, 2)]);
        let w = case.weights(3, 2);
        case.check("matmul", seed, |t, v| {
            let out = t.matmul(v[0], v[1])?;
            weighted_sum(t, out, &w)
        });
    }
}

#[test]
fn add_row_broadcast() {
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(5, 3), (1, 3)]);
        let w = case.weights(5, 3);
        case.check("add_row", seed, |t, v| {
            let out = t.add_row(v[0], v[1])?;
            weighted_sum(t, out, &w)
        });
    }
}

#[test]
fn affine_scale_and_constant_mask() {
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(3, 3)]);
        let w = case.weights(3, 3);
        let mask = case.weights(3, 3);
        case.check("affine", seed, |t, v| {
            let a = t.affine(v[0], 1.7, -0.3);
            let s = t.scale(a, -2.5);
            let out = t.mul_const(s, mask.clone())?;
            weighted_sum(t, out, &w)
        });
    }
}

#[test]
fn activations() {
    let acts = [
        Activation::LeakyRelu(0.2),
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Elu,
        Activation::Relu,
        Activation::Identity,
    ];
    for act in acts {
        for seed in 0..SEEDS {
            let mut case = Case::new(seed, &[(4, 3)]);
            let w = case.weights(4, 3);
            case.check(&act.to_string(), seed, |t, v| {
                let out = t.activation(v[0], act);
                weighted_sum(t, out, &w)
            });
        }
    }
}

#[test]
fn row_gathers_and_embeddings() {
    let idx: Rc<[usize]> = Rc::from(vec![2, 0, 2, 1, 3]);
    let opt: Rc<[Option<usize>]> = Rc::from(vec![Some(1), None, Some(3), Some(1)]);
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(4, 3)]);
        let wg = case.weights(5, 3);
        let we = case.weights(4, 3);
        case.check("gather_rows", seed, |t, v| {
            let out = t.gather_rows(v[0], idx.clone())?;
            weighted_sum(t, out, &wg)
        });
        case.check("embed_rows", seed, |t, v| {
            let out = t.embed_rows(v[0], opt.clone())?;
            weighted_sum(t, out, &we)
        });
    }
}

#[test]
fn column_ops() {
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(4, 2), (4, 3), (4, 1)]);
        let wc = case.weights(4, 5);
        let ws = case.weights(4, 1);
        let wm = case.weights(4, 3);
        case.check("concat_cols", seed, |t, v| {
            let out = t.concat_cols(&[v[0], v[1]])?;
            weighted_sum(t, out, &wc)
        });
        case.check("select_col", seed, |t, v| {
            let out = t.select_col(v[1], 2)?;
            weighted_sum(t, out, &ws)
        });
        case.check("mul_col", seed, |t, v| {
            let out = t.mul_col(v[1], v[2])?;
            weighted_sum(t, out, &wm)
        });
    }
}

#[test]
fn segment_ops_and_row_softmax() {
    let offsets: Rc<[usize]> = Rc::from(vec![0, 2, 5, 7]);
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(7, 1), (7, 3), (3, 4)]);
        let ws = case.weights(7, 1);
        let wsum = case.weights(3, 3);
        let wr = case.weights(3, 4);
        case.check("segment_softmax", seed, |t, v| {
            let out = t.segment_softmax(v[0], offsets.clone())?;
            weighted_sum(t, out, &ws)
        });
        case.check("segment_sum", seed, |t, v| {
            let out = t.segment_sum(v[1], offsets.clone())?;
            weighted_sum(t, out, &wsum)
        });
        case.check("softmax_rows", seed, |t, v| {
            let out = t.softmax_rows(v[2]);
            weighted_sum(t, out, &wr)
        });
    }
}

#[test]
fn mean_squared_error() {
    for seed in 0..SEEDS {
        let case = Case::new(seed, &[(3, 2), (3, 2)]);
        case.check("mse", seed, |t, v| t.mse(v[0], v[1]));
    }
}

#[test]
fn batch_norm_both_modes() {
    let mean = [0.2, -0.1, 0.4];
    let var = [0.5, 1.5, 0.9];
    for seed in 0..SEEDS {
        let mut case = Case::new(seed, &[(6, 3), (1, 3), (1, 3)]);
        let w = case.weights(6, 3);
        case.check("batch_norm(batch)", seed, |t, v| {
            let (out, _) = t.batch_norm(v[0], v[1], v[2], Normalize::Batch, 1e-5)?;
            weighted_sum(t, out, &w)
        });
        case.check("batch_norm(running)", seed, |t, v| {
            let norm = Normalize::Running { mean: &mean, var: &var };
            let (out, _) = t.batch_norm(v[0], v[1], v[2], norm, 1e-5)?;
            weighted_sum(t, out, &w)
        });
    }
}
