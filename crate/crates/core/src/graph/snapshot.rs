//! Daily heterogeneous graph snapshots and their line-delimited JSON form.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: String,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub name: String,
    /// Entity type label, e.g. `EVENT` or `HASHTAG`.
    pub kind: String,
    pub embedding: Vec<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub location: String,
    pub entity: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub date: NaiveDate,
    pub locations: Vec<Location>,
    pub entities: Vec<Entity>,
    /// Undirected entity pairs, deduplicated.
    pub relations: Vec<(String, String)>,
    /// One entry per (location, entity) pair with the number of mentions.
    pub location_mentions: Vec<Mention>,
    pub mobility: Vec<Flow>,
    pub adjacency: Vec<(String, String)>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Int(i64),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Text(s) => s,
            RawId::Int(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawLocation {
    id: RawId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    id: RawId,
    name: String,
    #[serde(rename = "type")]
    kind: String,
    embedding: Vec<f64>,
    count: u64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSnapshot {
    date: String,
    locations: Vec<RawLocation>,
    entities: Vec<RawEntity>,
    relations: Vec<(RawId, RawId)>,
    location_mentions: Vec<(RawId, RawId)>,
    mobility: Vec<(RawId, RawId, f64)>,
    adjacency: Vec<(RawId, RawId)>,
}

fn unordered(a: String, b: String) -> (String, String) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl GraphSnapshot {
    /// Builds a snapshot from raw parts, collapsing duplicate mentions (counts
    /// summed), duplicate relations and duplicate adjacency pairs, then validates it.
    pub fn from_parts(
        date: NaiveDate,
        locations: Vec<Location>,
        entities: Vec<Entity>,
        relations: Vec<(String, String)>,
        mentions: Vec<(String, String)>,
        mobility: Vec<Flow>,
        adjacency: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut mention_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (l, e) in mentions {
            *mention_counts.entry((l, e)).or_default() += 1;
        }
        let relations: BTreeSet<(String, String)> = relations
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| unordered(a, b))
            .collect();
        let adjacency: BTreeSet<(String, String)> = adjacency
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| unordered(a, b))
            .collect();
        let snap = GraphSnapshot {
            date,
            locations,
            entities,
            relations: relations.into_iter().collect(),
            location_mentions: mention_counts
                .into_iter()
                .map(|((location, entity), count)| Mention {
                    location,
                    entity,
                    count,
                })
                .collect(),
            mobility,
            adjacency: adjacency.into_iter().collect(),
        };
        snap.validate()?;
        Ok(snap)
    }

    /// Checks id uniqueness, referential integrity, embedding widths and weights.
    pub fn validate(&self) -> Result<()> {
        let day = self.date;
        let mut locs = HashSet::new();
        for l in &self.locations {
            if !locs.insert(l.id.as_str()) {
                return Err(Error::Data(format!("{day}: duplicate location id `{}`", l.id)));
            }
        }
        let mut ents = HashSet::new();
        for e in &self.entities {
            if !ents.insert(e.id.as_str()) {
                return Err(Error::Data(format!("{day}: duplicate entity id `{}`", e.id)));
            }
        }
        let width = self.embedding_dim();
        let check_vec = |what: &str, id: &str, v: &[f64]| -> Result<()> {
            if Some(v.len()) != width {
                return Err(Error::Data(format!(
                    "{day}: {what} `{id}` has embedding length {} (expected {})",
                    v.len(),
                    width.unwrap_or(0)
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("{day}: {what} `{id}` has a non-finite embedding")));
            }
            Ok(())
        };
        for e in &self.entities {
            check_vec("entity", &e.id, &e.embedding)?;
        }
        for l in &self.locations {
            if let Some(v) = &l.embedding {
                check_vec("location", &l.id, v)?;
            }
        }
        let need_entity = |id: &str| -> Result<()> {
            if ents.contains(id) {
                Ok(())
            } else {
                Err(Error::Reference(format!("{day}: unknown entity id `{id}`")))
            }
        };
        let need_location = |id: &str| -> Result<()> {
            if locs.contains(id) {
                Ok(())
            } else {
                Err(Error::Reference(format!("{day}: unknown location id `{id}`")))
            }
        };
        for (a, b) in &self.relations {
            need_entity(a)?;
            need_entity(b)?;
        }
        for m in &self.location_mentions {
            need_location(&m.location)?;
            need_entity(&m.entity)?;
        }
        for f in &self.mobility {
            need_location(&f.source)?;
            need_location(&f.target)?;
            if !(f.weight >= 0.0 && f.weight.is_finite()) {
                return Err(Error::Data(format!(
                    "{day}: mobility weight {} from `{}` to `{}` must be finite and non-negative",
                    f.weight, f.source, f.target
                )));
            }
        }
        for (a, b) in &self.adjacency {
            need_location(a)?;
            need_location(b)?;
        }
        Ok(())
    }

    /// Embedding width shared by the snapshot's entities and located embeddings.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.entities
            .first()
            .map(|e| e.embedding.len())
            .or_else(|| self.locations.iter().find_map(|l| l.embedding.as_ref().map(Vec::len)))
    }

    fn from_raw(raw: RawSnapshot) -> Result<Self> {
        let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("bad date `{}`: {e}", raw.date)))?;
        let pair = |(a, b): (RawId, RawId)| (a.into_string(), b.into_string());
        GraphSnapshot::from_parts(
            date,
            raw.locations
                .into_iter()
                .map(|l| Location {
                    id: l.id.into_string(),
                    embedding: l.embedding,
                })
                .collect(),
            raw.entities
                .into_iter()
                .map(|e| Entity {
                    id: e.id.into_string(),
                    name: e.name,
                    kind: e.kind,
                    embedding: e.embedding,
                    count: e.count,
                })
                .collect(),
            raw.relations.into_iter().map(pair).collect(),
            raw.location_mentions.into_iter().map(pair).collect(),
            raw.mobility
                .into_iter()
                .map(|(s, t, w)| Flow {
                    source: s.into_string(),
                    target: t.into_string(),
                    weight: w,
                })
                .collect(),
            raw.adjacency.into_iter().map(pair).collect(),
        )
    }

    fn to_raw(&self) -> RawSnapshot {
        let id = |s: &String| RawId::Text(s.clone());
        let mut mentions = Vec::new();
        for m in &self.location_mentions {
            for _ in 0..m.count {
                mentions.push((id(&m.location), id(&m.entity)));
            }
        }
        RawSnapshot {
            date: self.date.format("%Y-%m-%d").to_string(),
            locations: self
                .locations
                .iter()
                .map(|l| RawLocation {
                    id: id(&l.id),
                    embedding: l.embedding.clone(),
                })
                .collect(),
            entities: self
                .entities
                .iter()
                .map(|e| RawEntity {
                    id: id(&e.id),
                    name: e.name.clone(),
                    kind: e.kind.clone(),
                    embedding: e.embedding.clone(),
                    count: e.count,
                })
                .collect(),
            relations: self.relations.iter().map(|(a, b)| (id(a), id(b))).collect(),
            location_mentions: mentions,
            mobility: self
                .mobility
                .iter()
                .map(|f| (id(&f.source), id(&f.target), f.weight))
                .collect(),
            adjacency: self.adjacency.iter().map(|(a, b)| (id(a), id(b))).collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("snapshot serializes")
    }
}

/// Parses one snapshot record. `line` is used for error messages only.
pub fn parse_snapshot(text: &str, line: usize) -> Result<GraphSnapshot> {
    let raw: RawSnapshot = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    GraphSnapshot::from_raw(raw).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("line {line}: {m}")),
        Error::Reference(m) => Error::Reference(format!("line {line}: {m}")),
        other => other,
    })
}

/// Reads a snapshot file: one JSON object per line, blank lines ignored.
/// All snapshots must share one embedding width.
pub fn read_snapshots<R: BufRead>(reader: R) -> Result<Vec<GraphSnapshot>> {
    let mut out: Vec<GraphSnapshot> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let snap = parse_snapshot(&line, i + 1)?;
        if let Some(w) = snap.embedding_dim() {
            match width {
                None => width = Some(w),
                Some(prev) if prev != w => {
                    return Err(Error::Data(format!(
                        "line {}: embedding length {w} differs from earlier length {prev}",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        out.push(snap);
    }
    Ok(out)
}

pub fn write_snapshots<W: Write>(mut w: W, snapshots: &[GraphSnapshot]) -> Result<()> {
    for s in snapshots {
        writeln!(w, "{}", s.to_json_line())?;
    }
    Ok(())
}
