//! Density-based merging of near-duplicate entities.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::graph::snapshot::Entity;

/// Cluster label for each point, `None` for noise. Clusters are numbered in
/// the order they are discovered scanning points by index.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("dbscan eps must be positive, got {eps}")));
    }
    if min_pts < 1 {
        return Err(Error::Config("dbscan min_pts must be at least 1".into()));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::Data(format!("point {i} has a non-finite coordinate")));
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(Error::Data("points have differing dimensions".into()));
        }
    }
    let eps2 = eps * eps;
    let region = |i: usize| -> Vec<usize> {
        (0..points.len())
            .filter(|&j| sq_dist(&points[i], &points[j]) <= eps2)
            .collect()
    };

    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = region(i);
        if seeds.len() < min_pts {
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(c);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let more = region(j);
            if more.len() >= min_pts {
                queue.extend(more);
            }
        }
    }
    Ok(labels)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityMerge {
    /// One entity per cluster (and per noise point), in order of first member.
    pub representatives: Vec<Entity>,
    /// Maps every input id to its representative's id.
    pub remap: HashMap<String, String>,
}

/// Clusters entities by embedding and keeps the most-mentioned member of each
/// cluster (ties go to the smallest id). The representative's count becomes the
/// cluster total.
pub fn merge_entities(entities: &[Entity], eps: f64, min_pts: usize) -> Result<EntityMerge> {
    let points: Vec<Vec<f64>> = entities.iter().map(|e| e.embedding.clone()).collect();
    let labels = dbscan(&points, eps, min_pts)?;

    // group index lists, noise points as singletons
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_label: HashMap<usize, usize> = HashMap::new();
    for (i, label) in labels.iter().enumerate() {
        match label {
            Some(c) => {
                let g = *by_label.entry(*c).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            None => groups.push(vec![i]),
        }
    }

    let mut representatives = Vec::with_capacity(groups.len());
    let mut remap = HashMap::with_capacity(entities.len());
    for members in &groups {
        let head = members
            .iter()
            .copied()
            .max_by(|&a, &b| {
                entities[a]
                    .count
                    .cmp(&entities[b].count)
                    .then_with(|| entities[b].id.cmp(&entities[a].id))
            })
            .expect("non-empty cluster");
        let mut rep = entities[head].clone();
        rep.count = members.iter().map(|&m| entities[m].count).sum();
        for &m in members {
            remap.insert(entities[m].id.clone(), rep.id.clone());
        }
        representatives.push(rep);
    }
    Ok(EntityMerge { representatives, remap })
}
