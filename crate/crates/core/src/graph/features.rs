//! Node input vectors: semantic embedding followed by recent statistics.

use chrono::Duration;

use crate::config::TargetKind;
use crate::error::{Error, Result};
use crate::graph::stats::StatsTable;
use crate::graph::window::{NodeRef, SpatialTemporalGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Location,
    Entity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Row-major, `rows × (d_e + d_t)`.
    pub values: Vec<f64>,
    pub kinds: Vec<RowKind>,
    /// For location rows without a supplied embedding, the location index whose
    /// learned embedding fills the semantic part.
    pub learned_location: Vec<Option<usize>>,
    pub d_e: usize,
    pub d_t: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.kinds.len()
    }

    pub fn width(&self) -> usize {
        self.d_e + self.d_t
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    /// The statistics part of a row.
    pub fn history(&self, i: usize) -> &[f64] {
        &self.row(i)[self.d_e..]
    }

    /// Divides the statistics part of every location row by its location's scale.
    pub fn scale_history(&mut self, graph: &SpatialTemporalGraph, scales: &[f64]) {
        let w = self.width();
        for i in 0..graph.num_location_copies() {
            if let NodeRef::Location { location, .. } = graph.node(i) {
                let s = scales[location];
                for v in &mut self.values[i * w + self.d_e..(i + 1) * w] {
                    *v /= s;
                }
            }
        }
    }
}

/// Assembles one row per graph node. Location rows carry the `d_t` counts
/// preceding that copy's day, oldest first; entity rows end in `d_t` zeros.
pub fn build_features(
    graph: &SpatialTemporalGraph,
    stats: &StatsTable,
    target: TargetKind,
    d_e: usize,
    d_t: usize,
) -> Result<FeatureMatrix> {
    let w = d_e + d_t;
    let n = graph.num_nodes();
    let mut values = Vec::with_capacity(n * w);
    let mut kinds = Vec::with_capacity(n);
    let mut learned_location = Vec::with_capacity(n);
    for i in 0..n {
        match graph.node(i) {
            NodeRef::Location { location, day } => {
                match graph.location_embedding(i) {
                    Some(e) if e.len() == d_e => {
                        values.extend_from_slice(e);
                        learned_location.push(None);
                    }
                    Some(e) => {
                        return Err(Error::Data(format!(
                            "location `{}` embedding has length {} (expected {d_e})",
                            graph.locations()[location],
                            e.len()
                        )))
                    }
                    None => {
                        values.extend(std::iter::repeat_n(0.0, d_e));
                        learned_location.push(Some(location));
                    }
                }
                let id = &graph.locations()[location];
                let date = graph.dates()[day];
                for k in (1..=d_t).rev() {
                    let d = date - Duration::days(k as i64);
                    values.push(stats.require(id, d, target)?);
                }
                kinds.push(RowKind::Location);
            }
            NodeRef::Entity(k) => {
                let e = &graph.entities()[k];
                if e.embedding.len() != d_e {
                    return Err(Error::Data(format!(
                        "entity `{}` embedding has length {} (expected {d_e})",
                        e.id,
                        e.embedding.len()
                    )));
                }
                values.extend_from_slice(&e.embedding);
                values.extend(std::iter::repeat_n(0.0, d_t));
                kinds.push(RowKind::Entity);
                learned_location.push(None);
            }
        }
    }
    Ok(FeatureMatrix {
        values,
        kinds,
        learned_location,
        d_e,
        d_t,
    })
}
