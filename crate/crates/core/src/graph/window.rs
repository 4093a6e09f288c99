//! Aggregation of consecutive daily snapshots into one spatial-temporal graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::graph::merge::merge_entities;
use crate::graph::snapshot::{Entity, GraphSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    EntityEntity,
    LocationEntity,
    LocationLocation,
    SelfLoop,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::EntityEntity => "entity-entity",
            EdgeKind::LocationEntity => "location-entity",
            EdgeKind::LocationLocation => "location-location",
            EdgeKind::SelfLoop => "self-loop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Location { location: usize, day: usize },
    Entity(usize),
}

/// Undirected edge with `a <= b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphOptions {
    pub drop_entity_entity_edges: bool,
    pub drop_location_entity_edges: bool,
    pub self_loops: bool,
    /// A mobility edge exists when the window total for a directed pair exceeds this.
    pub mobility_threshold: f64,
    /// `(eps, min_pts)` for entity merging; `None` keeps entities keyed by id only.
    pub merge: Option<(f64, usize)>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            drop_entity_entity_edges: false,
            drop_location_entity_edges: false,
            self_loops: true,
            mobility_threshold: 0.0,
            merge: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeCounts {
    pub entity_entity: usize,
    pub location_entity: usize,
    pub location_location: usize,
    pub self_loops: usize,
}

impl EdgeCounts {
    pub fn total(&self) -> usize {
        self.entity_entity + self.location_entity + self.location_location + self.self_loops
    }
}

#[derive(Debug, Clone)]
pub struct SpatialTemporalGraph {
    dates: Vec<NaiveDate>,
    locations: Vec<String>,
    /// Per location copy (`day * L + location`), the snapshot's embedding if any.
    location_embeddings: Vec<Option<Vec<f64>>>,
    entities: Vec<Entity>,
    remap: HashMap<String, String>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(usize, EdgeKind)>>,
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Builds the aggregate graph for a run of consecutive days.
pub fn aggregate_window(snapshots: &[GraphSnapshot], opts: &GraphOptions) -> Result<SpatialTemporalGraph> {
    let Some(first) = snapshots.first() else {
        return Err(Error::Config("window length must be at least 1".into()));
    };
    for w in snapshots.windows(2) {
        if w[0].date.succ_opt() != Some(w[1].date) {
            return Err(Error::Window(format!(
                "snapshots must be consecutive days, found {} followed by {}",
                w[0].date, w[1].date
            )));
        }
    }
    let locations: Vec<String> = first.locations.iter().map(|l| l.id.clone()).collect();
    let universe: BTreeSet<&str> = locations.iter().map(String::as_str).collect();
    for s in &snapshots[1..] {
        let ids: BTreeSet<&str> = s.locations.iter().map(|l| l.id.as_str()).collect();
        if ids != universe {
            return Err(Error::Window(format!(
                "location set on {} differs from {}",
                s.date, first.date
            )));
        }
    }
    let n_loc = locations.len();
    let days = snapshots.len();
    let loc_index: HashMap<&str, usize> = locations.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let copy = |day: usize, loc: &str| day * n_loc + loc_index[loc];

    let mut location_embeddings = vec![None; days * n_loc];
    for (d, s) in snapshots.iter().enumerate() {
        for l in &s.locations {
            location_embeddings[copy(d, &l.id)] = l.embedding.clone();
        }
    }

    // time-unaware union of entities, first appearance wins, counts summed
    let mut union: Vec<Entity> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for s in snapshots {
        for e in &s.entities {
            match seen.get(&e.id) {
                Some(&i) => union[i].count += e.count,
                None => {
                    seen.insert(e.id.clone(), union.len());
                    union.push(e.clone());
                }
            }
        }
    }
    let (entities, remap) = match opts.merge {
        Some((eps, min_pts)) => {
            let m = merge_entities(&union, eps, min_pts)?;
            let first_seen: HashMap<&str, usize> = union
                .iter()
                .enumerate()
                .map(|(i, e)| (m.remap[&e.id].as_str(), i))
                .rev()
                .collect();
            let mut reps = m.representatives.clone();
            reps.sort_by_key(|r| first_seen[r.id.as_str()]);
            (reps, m.remap)
        }
        None => {
            let remap = union.iter().map(|e| (e.id.clone(), e.id.clone())).collect();
            (union, remap)
        }
    };
    let base = days * n_loc;
    let ent_index: HashMap<&str, usize> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), base + i))
        .collect();
    let ent_node = |id: &str| ent_index[remap[id].as_str()];

    let mut edge_set: BTreeMap<(usize, usize), EdgeKind> = BTreeMap::new();
    if !opts.drop_entity_entity_edges {
        for s in snapshots {
            for (a, b) in &s.relations {
                let (x, y) = (ent_node(a), ent_node(b));
                if x != y {
                    edge_set.insert(pair(x, y), EdgeKind::EntityEntity);
                }
            }
        }
    }
    if !opts.drop_location_entity_edges {
        for (d, s) in snapshots.iter().enumerate() {
            for m in &s.location_mentions {
                edge_set.insert(
                    pair(copy(d, &m.location), ent_node(&m.entity)),
                    EdgeKind::LocationEntity,
                );
            }
        }
    }
    for (d, s) in snapshots.iter().enumerate() {
        for (a, b) in &s.adjacency {
            edge_set.insert(pair(copy(d, a), copy(d, b)), EdgeKind::LocationLocation);
        }
    }
    let mut flow: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for s in snapshots {
        for f in &s.mobility {
            if f.source != f.target {
                *flow
                    .entry((loc_index[f.source.as_str()], loc_index[f.target.as_str()]))
                    .or_default() += f.weight;
            }
        }
    }
    for (&(src, dst), &total) in &flow {
        if total > opts.mobility_threshold {
            for d in 0..days {
                edge_set.insert(pair(d * n_loc + src, d * n_loc + dst), EdgeKind::LocationLocation);
            }
        }
    }

    let n_nodes = base + entities.len();
    let mut edges: Vec<Edge> = edge_set.into_iter().map(|((a, b), kind)| Edge { a, b, kind }).collect();
    if opts.self_loops {
        edges.extend((0..n_nodes).map(|i| Edge {
            a: i,
            b: i,
            kind: EdgeKind::SelfLoop,
        }));
    }
    let mut neighbors: Vec<Vec<(usize, EdgeKind)>> = vec![Vec::new(); n_nodes];
    for e in &edges {
        neighbors[e.a].push((e.b, e.kind));
        if e.a != e.b {
            neighbors[e.b].push((e.a, e.kind));
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    Ok(SpatialTemporalGraph {
        dates: snapshots.iter().map(|s| s.date).collect(),
        locations,
        location_embeddings,
        entities,
        remap,
        edges,
        neighbors,
    })
}

impl SpatialTemporalGraph {
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn window_len(&self) -> usize {
        self.dates.len()
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn num_location_copies(&self) -> usize {
        self.dates.len() * self.locations.len()
    }

    /// Merged entities; node index of entity `k` is `num_location_copies() + k`.
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    /// Representative id for an original entity id seen in the window.
    pub fn representative(&self, id: &str) -> Option<&str> {
        self.remap.get(id).map(String::as_str)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_location_copies() + self.entities.len()
    }

    pub fn copy_index(&self, location: usize, day: usize) -> usize {
        day * self.locations.len() + location
    }

    pub fn node(&self, index: usize) -> NodeRef {
        let copies = self.num_location_copies();
        if index < copies {
            let n = self.locations.len();
            NodeRef::Location {
                location: index % n,
                day: index / n,
            }
        } else {
            NodeRef::Entity(index - copies)
        }
    }

    pub fn location_embedding(&self, copy: usize) -> Option<&[f64]> {
        self.location_embeddings[copy].as_deref()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `node` (including itself when self-loops are on), sorted by index.
    pub fn neighbors(&self, node: usize) -> &[(usize, EdgeKind)] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn edge_counts(&self) -> EdgeCounts {
        let mut c = EdgeCounts::default();
        for e in &self.edges {
            match e.kind {
                EdgeKind::EntityEntity => c.entity_entity += 1,
                EdgeKind::LocationEntity => c.location_entity += 1,
                EdgeKind::LocationLocation => c.location_location += 1,
                EdgeKind::SelfLoop => c.self_loops += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::snapshot::{Flow, Location};

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 6, d).unwrap()
    }

    fn snap(d: u32, locs: &[&str], ents: &[&str], mentions: &[(&str, &str)]) -> GraphSnapshot {
        GraphSnapshot::from_parts(
            day(d),
            locs.iter()
                .map(|l| Location {
                    id: l.to_string(),
                    embedding: None,
                })
                .collect(),
            ents.iter()
                .map(|e| Entity {
                    id: e.to_string(),
                    name: e.to_string(),
                    kind: "EVENT".into(),
                    embedding: vec![0.0, 1.0],
                    count: 1,
                })
                .collect(),
            vec![],
            mentions.iter().map(|(l, e)| (l.to_string(), e.to_string())).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn entity_links_to_each_day_copy() {
        let s = [
            snap(1, &["A"], &["e1"], &[("A", "e1")]),
            snap(2, &["A"], &["e1"], &[("A", "e1")]),
        ];
        let g = aggregate_window(&s, &GraphOptions::default()).unwrap();
        assert_eq!(g.entities().len(), 1);
        let e1 = g.num_location_copies();
        let nbrs: Vec<usize> = g.neighbors(e1).iter().map(|x| x.0).collect();
        assert_eq!(nbrs, vec![0, 1, e1]);
    }

    #[test]
    fn union_counts() {
        let s = [snap(1, &["A"], &["e1"], &[]), snap(2, &["A"], &["e1", "e2"], &[])];
        let g = aggregate_window(&s, &GraphOptions::default()).unwrap();
        assert_eq!(g.entities().len(), 2);
        assert_eq!(g.num_location_copies(), 2);
        assert_eq!(g.entities()[0].count, 2);
    }

    #[test]
    fn single_day_is_snapshot_plus_self_loops() {
        let s = [snap(1, &["A", "B"], &["e1", "e2"], &[("A", "e1"), ("B", "e2")])];
        let g = aggregate_window(&s, &GraphOptions::default()).unwrap();
        let c = g.edge_counts();
        assert_eq!((c.location_entity, c.self_loops), (2, 4));
        assert_eq!(g.num_nodes(), 4);
    }

    #[test]
    fn gaps_and_empty_windows_are_rejected() {
        let s = [snap(1, &["A"], &[], &[]), snap(3, &["A"], &[], &[])];
        assert!(matches!(
            aggregate_window(&s, &GraphOptions::default()),
            Err(Error::Window(_))
        ));
        assert!(matches!(
            aggregate_window(&[], &GraphOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mobility_uses_window_total_and_stays_within_day() {
        let mut a = snap(1, &["A", "B"], &[], &[]);
        let mut b = snap(2, &["A", "B"], &[], &[]);
        a.mobility.push(Flow {
            source: "A".into(),
            target: "B".into(),
            weight: 2.0,
        });
        b.mobility.push(Flow {
            source: "A".into(),
            target: "B".into(),
            weight: 2.0,
        });
        let opts = GraphOptions {
            mobility_threshold: 3.0,
            ..GraphOptions::default()
        };
        let g = aggregate_window(&[a.clone(), b.clone()], &opts).unwrap();
        let ll: Vec<_> = g
            .edges()
            .iter()
            .filter(|e| e.kind == EdgeKind::LocationLocation)
            .map(|e| (e.a, e.b))
            .collect();
        assert_eq!(ll, vec![(0, 1), (2, 3)]);
        let g1 = aggregate_window(&[a], &opts).unwrap();
        assert_eq!(g1.edge_counts().location_location, 0);
    }

    #[test]
    fn merging_repoints_mentions() {
        let mut s = snap(1, &["A"], &["e1", "e2"], &[("A", "e1"), ("A", "e2")]);
        s.entities[1].count = 5;
        s.entities[1].embedding = vec![0.0, 1.05];
        let opts = GraphOptions {
            merge: Some((0.1, 1)),
            ..GraphOptions::default()
        };
        let g = aggregate_window(&[s], &opts).unwrap();
        assert_eq!(g.entities().len(), 1);
        assert_eq!(g.entities()[0].id, "e2");
        assert_eq!(g.representative("e1"), Some("e2"));
        assert_eq!(g.edge_counts().location_entity, 1);
    }

    #[test]
    fn without_self_loops_isolated_nodes_have_no_neighbors() {
        let s = [snap(1, &["A"], &["e1"], &[])];
        let opts = GraphOptions {
            self_loops: false,
            ..GraphOptions::default()
        };
        let g = aggregate_window(&s, &opts).unwrap();
        assert_eq!(g.degree(0), 0);
    }
}
