//! Multi-head graph attention over the spatial-temporal graph.

use std::rc::Rc;

use epiwatch_tensor::{Activation, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, SpatialTemporalGraph};

/// Directed message edges grouped by target node, ready for segment ops.
#[derive(Debug, Clone)]
pub struct NeighborPlan {
    pub num_targets: usize,
    pub edge_targets: Rc<[usize]>,
    pub edge_sources: Rc<[usize]>,
    pub kinds: Vec<EdgeKind>,
    pub offsets: Rc<[usize]>,
}

impl NeighborPlan {
    /// Plans aggregation for nodes `0..num_targets` of `graph`.
    pub fn new(graph: &SpatialTemporalGraph, num_targets: usize) -> Result<Self> {
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        let mut kinds = Vec::new();
        let mut offsets = vec![0];
        for i in 0..num_targets {
            let nbrs = graph.neighbors(i);
            if nbrs.is_empty() {
                return Err(TensorError::EmptyNeighborhood(format!(
                    "node {i} has no neighbors (self-loops disabled?)"
                ))
                .into());
            }
            for &(j, kind) in nbrs {
                targets.push(i);
                sources.push(j);
                kinds.push(kind);
            }
            offsets.push(targets.len());
        }
        Ok(NeighborPlan {
            num_targets,
            edge_targets: targets.into(),
            edge_sources: sources.into(),
            kinds,
            offsets: offsets.into(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.kinds.len()
    }

    pub fn segment(&self, target: usize) -> std::ops::Range<usize> {
        self.offsets[target]..self.offsets[target + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionHead {
    /// `input × hidden` projection.
    pub projection: ParamId,
    /// `2·hidden × 1` scoring vector over `[target ∥ source]`.
    pub score: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgnnLayer {
    pub heads: Vec<AttentionHead>,
    pub input: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub leaky_slope: f64,
}

/// Score vectors start at a fraction of the Glorot range so initial attention is close to uniform.
pub const SCORE_INIT_SCALE: f64 = 0.1;

pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::matrix(rows, cols, data)
}

impl DgnnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        heads: usize,
        activation: Activation,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || hidden == 0 || input == 0 {
            return Err(Error::Config(
                "attention layer needs at least one head and non-zero widths".into(),
            ));
        }
        Activation::leaky_relu(leaky_slope)?;
        let heads = (0..heads)
            .map(|p| AttentionHead {
                projection: store.add(format!("{name}.head{p}.projection"), glorot(input, hidden, rng)),
                score: store.add(
                    format!("{name}.head{p}.score"),
                    glorot(2 * hidden, 1, rng).map(|v| v * SCORE_INIT_SCALE),
                ),
            })
            .collect();
        Ok(DgnnLayer {
            heads,
            input,
            hidden,
            activation,
            leaky_slope,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DgnnOutput {
    /// `num_targets × hidden` node embeddings.
    pub embeddings: Var,
    /// Per-head attention weights, one entry per plan edge.
    pub alphas: Vec<Var>,
}

/// One propagation step: per head `z = x W`, edge scores
/// `LeakyReLU(w · [z_i ∥ z_j])`, softmax within each target's neighborhood,
/// weighted sum of neighbor projections; heads are averaged before the
/// output activation.
pub fn dgnn_forward(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &DgnnLayer,
    x: Var,
    plan: &NeighborPlan,
) -> Result<DgnnOutput> {
    let width = tape.value(x).cols();
    if width != layer.input {
        return Err(TensorError::Shape {
            op: "dgnn_forward",
            left: vec![tape.value(x).rows(), width],
            right: vec![layer.input, layer.hidden],
        }
        .into());
    }
    let leaky = Activation::leaky_relu(layer.leaky_slope)?;
    let mut total: Option<Var> = None;
    let mut alphas = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let w = tape.param(store, head.projection);
        let a = tape.param(store, head.score);
        let z = tape.matmul(x, w)?;
        let zi = tape.gather_rows(z, plan.edge_targets.clone())?;
        let zj = tape.gather_rows(z, plan.edge_sources.clone())?;
        let pair = tape.concat_cols(&[zi, zj])?;
        let raw = tape.matmul(pair, a)?;
        let e = tape.activation(raw, leaky);
        let alpha = tape.segment_softmax(e, plan.offsets.clone())?;
        let msg = tape.mul_col(zj, alpha)?;
        let agg = tape.segment_sum(msg, plan.offsets.clone())?;
        total = Some(match total {
            None => agg,
            Some(t) => tape.add(t, agg)?,
        });
        alphas.push(alpha);
    }
    let total = total.expect("at least one head");
    let mean = tape.scale(total, 1.0 / layer.heads.len() as f64);
    let embeddings = tape.activation(mean, layer.activation);
    Ok(DgnnOutput { embeddings, alphas })
}

/// Attention weights of one forward pass, tagged with the parameter version
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub kinds: Vec<EdgeKind>,
    /// `weights[head][edge]`.
    pub weights: Vec<Vec<f64>>,
    pub param_version: u64,
}

impl AttentionRecord {
    pub fn capture(tape: &Tape, plan: &NeighborPlan, out: &DgnnOutput, param_version: u64) -> Self {
        AttentionRecord {
            targets: plan.edge_targets.to_vec(),
            sources: plan.edge_sources.to_vec(),
            kinds: plan.kinds.clone(),
            weights: out.alphas.iter().map(|&a| tape.value(a).data().to_vec()).collect(),
            param_version,
        }
    }

    pub fn head_mean(&self, edge: usize) -> f64 {
        self.weights.iter().map(|w| w[edge]).sum::<f64>() / self.weights.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Head-averaged weights of all edges of `kind`. Fails if the parameters have
/// changed since the record was captured.
pub fn export_attention(record: &AttentionRecord, current_version: u64, kind: EdgeKind) -> Result<Vec<AttentionEdge>> {
    if record.param_version != current_version {
        return Err(Error::Consistency(format!(
            "record from parameter version {}, parameters are now at version {current_version}",
            record.param_version
        )));
    }
    Ok((0..record.kinds.len())
        .filter(|&e| record.kinds[e] == kind)
        .map(|e| AttentionEdge {
            source: record.sources[e],
            target: record.targets[e],
            weight: record.head_mean(e),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan_from(neighbors: &[&[usize]]) -> NeighborPlan {
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        let mut offsets = vec![0];
        for (i, n) in neighbors.iter().enumerate() {
            for &j in n.iter() {
                targets.push(i);
                sources.push(j);
            }
            offsets.push(targets.len());
        }
        NeighborPlan {
            num_targets: neighbors.len(),
            kinds: vec![EdgeKind::LocationEntity; targets.len()],
            edge_targets: targets.into(),
            edge_sources: sources.into(),
            offsets: offsets.into(),
        }
    }

    fn layer(heads: usize, act: Activation) -> (ParamStore, DgnnLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = DgnnLayer::new(&mut store, "dgnn", 3, 4, heads, act, 0.2, &mut rng).unwrap();
        (store, l)
    }

    #[test]
    fn single_neighbor_passes_projection_through() {
        let (store, l) = layer(1, Activation::Elu);
        let plan = plan_from(&[&[1], &[1]]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 0.3]]).unwrap());
        let out = dgnn_forward(&mut tape, &store, &l, x, &plan).unwrap();
        let z = Tensor::from_rows(&[vec![0.5, -1.0, 0.3]])
            .unwrap()
            .matmul(store.value(l.heads[0].projection))
            .unwrap();
        let expect = Activation::Elu.apply_tensor(&z);
        assert_eq!(tape.value(out.embeddings).row_slice(0), expect.data());
        assert_eq!(tape.value(out.alphas[0]).data(), &[1.0, 1.0]);
    }

    #[test]
    fn identical_neighbors_split_evenly() {
        let (store, l) = layer(2, Activation::Identity);
        let plan = plan_from(&[&[1, 2]]);
        let mut tape = Tape::new();
        let row = vec![0.2, 0.4, -0.1];
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0, 1.0], row.clone(), row]).unwrap());
        let out = dgnn_forward(&mut tape, &store, &l, x, &plan).unwrap();
        for a in &out.alphas {
            assert_eq!(tape.value(*a).data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn export_averages_heads_and_checks_staleness() {
        let record = AttentionRecord {
            targets: vec![0, 0],
            sources: vec![0, 1],
            kinds: vec![EdgeKind::SelfLoop, EdgeKind::LocationEntity],
            weights: vec![vec![0.8, 0.2], vec![0.6, 0.4]],
            param_version: 4,
        };
        let le = export_attention(&record, 4, EdgeKind::LocationEntity).unwrap();
        assert_eq!(le.len(), 1);
        assert!((le[0].weight - 0.3).abs() < 1e-15);
        assert!(matches!(
            export_attention(&record, 5, EdgeKind::LocationEntity),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let (store, l) = layer(1, Activation::Elu);
        let plan = plan_from(&[&[0]]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 5));
        assert!(dgnn_forward(&mut tape, &store, &l, x, &plan).is_err());
    }
}
