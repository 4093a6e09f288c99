//! Independent reference implementations and random fixture builders.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use epiwatch_core::eval::PredictionRecord;
use epiwatch_core::graph::{EdgeKind, Entity, Flow, GraphSnapshot, Location, NodeRef, SpatialTemporalGraph};
use epiwatch_core::TargetKind;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 6, 1).unwrap() + Duration::days(offset)
}

/// Quadratic DBSCAN: core points are those with at least `min_pts` points
/// (itself included) within `eps`; clusters are connected components of core
/// points, numbered by their lowest core index; a border point joins the
/// lowest-numbered cluster among its core neighbors.
pub fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let close = |i: usize, j: usize| {
        let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_pts)
        .collect();
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && component[j] == usize::MAX && close(i, j) {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(component[i])
            } else {
                (0..n).filter(|&j| core[j] && close(i, j)).map(|j| component[j]).min()
            }
        })
        .collect()
}

/// Clustered points with some isolated noise.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..rng.gen_range(1..5))
        .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < 0.2 {
                (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect()
            } else {
                let c = &centers[rng.gen_range(0..centers.len())];
                c.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Copy(String, usize),
    Entity(String),
}

pub type LabeledEdge = (Node, Node, EdgeKind);

fn labeled(a: Node, b: Node, kind: EdgeKind) -> LabeledEdge {
    if a <= b {
        (a, b, kind)
    } else {
        (b, a, kind)
    }
}

/// Node labels and labeled edge set of a window built by plain set unions over
/// the input records, without entity merging.
pub fn reference_window(snapshots: &[GraphSnapshot], threshold: f64) -> (BTreeSet<Node>, BTreeSet<LabeledEdge>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for (d, s) in snapshots.iter().enumerate() {
        for l in &s.locations {
            nodes.insert(Node::Copy(l.id.clone(), d));
        }
        for e in &s.entities {
            nodes.insert(Node::Entity(e.id.clone()));
        }
        for (a, b) in &s.relations {
            edges.insert(labeled(
                Node::Entity(a.clone()),
                Node::Entity(b.clone()),
                EdgeKind::EntityEntity,
            ));
        }
        for m in &s.location_mentions {
            edges.insert(labeled(
                Node::Copy(m.location.clone(), d),
                Node::Entity(m.entity.clone()),
                EdgeKind::LocationEntity,
            ));
        }
        for (a, b) in &s.adjacency {
            edges.insert(labeled(
                Node::Copy(a.clone(), d),
                Node::Copy(b.clone(), d),
                EdgeKind::LocationLocation,
            ));
        }
    }
    let mut flow: BTreeMap<(String, String), f64> = BTreeMap::new();
    for s in snapshots {
        for f in &s.mobility {
            *flow.entry((f.source.clone(), f.target.clone())).or_default() += f.weight;
        }
    }
    for ((src, dst), total) in flow {
        if src != dst && total > threshold {
            for d in 0..snapshots.len() {
                edges.insert(labeled(
                    Node::Copy(src.clone(), d),
                    Node::Copy(dst.clone(), d),
                    EdgeKind::LocationLocation,
                ));
            }
        }
    }
    for n in &nodes {
        edges.insert((n.clone(), n.clone(), EdgeKind::SelfLoop));
    }
    (nodes, edges)
}

pub fn node_label(g: &SpatialTemporalGraph, index: usize) -> Node {
    match g.node(index) {
        NodeRef::Location { location, day } => Node::Copy(g.locations()[location].clone(), day),
        NodeRef::Entity(k) => Node::Entity(g.entities()[k].id.clone()),
    }
}

pub fn labeled_edges(g: &SpatialTemporalGraph) -> BTreeSet<LabeledEdge> {
    g.edges()
        .iter()
        .map(|e| labeled(node_label(g, e.a), node_label(g, e.b), e.kind))
        .collect()
}

/// Consecutive snapshots over one location set with random entities, relations,
/// mentions, flows and adjacency. Entity attributes are fixed across days.
pub fn random_snapshots(
    rng: &mut ChaCha8Rng,
    days: usize,
    locations: usize,
    entities: usize,
    dim: usize,
) -> Vec<GraphSnapshot> {
    let loc_ids: Vec<String> = (0..locations).map(|i| format!("L{i}")).collect();
    let pool: Vec<Entity> = (0..entities)
        .map(|k| Entity {
            id: format!("e{k}"),
            name: format!("entity {k}"),
            kind: ["EVENT", "HASHTAG", "ORGANIZATION"][k % 3].to_string(),
            embedding: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            count: 1,
        })
        .collect();
    (0..days)
        .map(|d| {
            let mut present = Vec::new();
            for e in &pool {
                if rng.gen::<f64>() < 0.4 {
                    present.push(Entity {
                        count: rng.gen_range(1..6),
                        ..e.clone()
                    });
                }
            }
            let mut relations = Vec::new();
            let mut mentions = Vec::new();
            if !present.is_empty() {
                for _ in 0..rng.gen_range(0..=present.len()) {
                    let a = &present[rng.gen_range(0..present.len())].id;
                    let b = &present[rng.gen_range(0..present.len())].id;
                    relations.push((a.clone(), b.clone()));
                }
                for _ in 0..rng.gen_range(0..=2 * present.len()) {
                    let l = &loc_ids[rng.gen_range(0..locations)];
                    let e = &present[rng.gen_range(0..present.len())].id;
                    mentions.push((l.clone(), e.clone()));
                }
            }
            let mut mobility = Vec::new();
            let mut adjacency = Vec::new();
            for (i, a) in loc_ids.iter().enumerate() {
                for (j, b) in loc_ids.iter().enumerate() {
                    if i != j && rng.gen::<f64>() < 0.3 {
                        mobility.push(Flow {
                            source: a.clone(),
                            target: b.clone(),
                            weight: rng.gen_range(0.0..2.0),
                        });
                    }
                    if i < j && rng.gen::<f64>() < 0.2 {
                        adjacency.push((a.clone(), b.clone()));
                    }
                }
            }
            let locs = loc_ids
                .iter()
                .map(|id| Location {
                    id: id.clone(),
                    embedding: None,
                })
                .collect();
            GraphSnapshot::from_parts(day(d as i64), locs, present, relations, mentions, mobility, adjacency).unwrap()
        })
        .collect()
}

pub fn reference_mae(records: &[PredictionRecord]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in records {
        if let Some(y) = r.actual {
            total += (y - r.predicted).abs();
            n += 1;
        }
    }
    total / n as f64
}

pub fn reference_smape(records: &[PredictionRecord]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in records {
        if let Some(y) = r.actual {
            let num = (y - r.predicted).abs();
            let den = (y + r.predicted).abs();
            total += if num == 0.0 && den == 0.0 { 0.0 } else { num / den };
            n += 1;
        }
    }
    total / n as f64
}

/// Non-negative records over ten cutoff dates, about a tenth without actuals.
pub fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| {
            let actual = (rng.gen::<f64>() >= 0.1).then(|| {
                if rng.gen::<f64>() < 0.1 {
                    0.0
                } else {
                    rng.gen_range(0..1000) as f64
                }
            });
            let predicted = if rng.gen::<f64>() < 0.1 {
                0.0
            } else {
                rng.gen_range(0.0..1200.0)
            };
            PredictionRecord {
                cutoff_date: day(rng.gen_range(0..10)),
                horizon: 7,
                location: format!("L{}", i % 7),
                target: TargetKind::Cases,
                predicted,
                actual,
            }
        })
        .collect()
}
