//! Risk factors: entities that draw a location's attention on its worst days.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{Duration, NaiveDate};

use crate::config::TargetKind;
use crate::dataset::{Dataset, SampleCache, WindowSample};
use crate::dgnn::export_attention;
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, NodeRef, StatsTable};
use crate::model::Forecaster;

/// Per location, per entity id: head-averaged attention for one inference.
pub type LocationAttention = BTreeMap<String, BTreeMap<String, f64>>;

/// The top `ceil(0.2 · n)` of `dates` ranked by the location's counts
/// (descending; ties prefer the later date). Dates without statistics are ignored.
pub fn build_high_set(
    stats: &StatsTable,
    location: &str,
    dates: &[NaiveDate],
    kind: TargetKind,
) -> Result<Vec<NaiveDate>> {
    let mut ranked: Vec<(f64, NaiveDate)> = dates
        .iter()
        .filter_map(|&d| stats.value(location, d, kind).map(|v| (v, d)))
        .collect();
    if ranked.is_empty() {
        return Err(Error::Coverage(format!("no statistics for location `{location}`")));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| b.1.cmp(&a.1)));
    let take = (ranked.len() as f64 * 0.2).ceil() as usize;
    Ok(ranked.into_iter().take(take).map(|(_, d)| d).collect())
}

/// Averaging denominator for risk scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Only high-set dates on which the edge exists.
    #[default]
    EdgeDates,
    /// All high-set dates; a missing edge counts as zero attention.
    AllDates,
}

/// Mean attention of every entity linked to `location` on at least one high-set date.
pub fn risk_scores(
    attention: &BTreeMap<NaiveDate, LocationAttention>,
    high_set: &[NaiveDate],
    location: &str,
    denominator: Denominator,
) -> Result<Vec<(String, f64)>> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for d in high_set {
        let per_loc = attention
            .get(d)
            .ok_or_else(|| Error::Coverage(format!("no inference available for high-set date {d}")))?;
        if let Some(ents) = per_loc.get(location) {
            for (e, w) in ents {
                let s = sums.entry(e.as_str()).or_default();
                s.0 += w;
                s.1 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(e, (total, n))| {
            let den = match denominator {
                Denominator::EdgeDates => n,
                Denominator::AllDates => high_set.len(),
            };
            (e.to_string(), total / den as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub location: String,
    pub entity: String,
    pub entity_type: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskScoreTable {
    pub rows: Vec<RiskRow>,
    pub high_sets: BTreeMap<String, Vec<NaiveDate>>,
}

impl RiskScoreTable {
    /// Highest-scoring entities for `location`, ties broken by entity id,
    /// optionally restricted to one entity type.
    pub fn top_k(&self, location: &str, k: usize, entity_type: Option<&str>) -> Result<Vec<&RiskRow>> {
        if k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut rows: Vec<&RiskRow> = self
            .rows
            .iter()
            .filter(|r| r.location == location)
            .filter(|r| entity_type.is_none_or(|t| r.entity_type == t))
            .collect();
        rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.entity.cmp(&b.entity)));
        rows.truncate(k);
        Ok(rows)
    }

    pub fn locations(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.location.as_str()).collect()
    }

    /// Writes `location,rank,entity,entity_type,risk_score`, top `k` per location.
    pub fn write_report<W: Write>(&self, w: W, k: usize, entity_type: Option<&str>) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["location", "rank", "entity", "entity_type", "risk_score"])?;
        for loc in self.high_sets.keys() {
            for (i, r) in self.top_k(loc, k, entity_type)?.into_iter().enumerate() {
                wtr.write_record([
                    r.location.clone(),
                    (i + 1).to_string(),
                    r.entity.clone(),
                    r.entity_type.clone(),
                    r.score.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Location-entity attention of the inference window, averaged over the day
/// copies of each location the entity is linked to.
pub fn location_attention(
    model: &Forecaster,
    sample: &WindowSample,
) -> Result<(LocationAttention, BTreeMap<String, String>)> {
    let record = model.attention(sample)?;
    let edges = export_attention(&record, model.store.version(), EdgeKind::LocationEntity)?;
    let g = &sample.graph;
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for e in edges {
        if let (NodeRef::Location { location, .. }, NodeRef::Entity(k)) = (g.node(e.target), g.node(e.source)) {
            let s = acc.entry((location, k)).or_default();
            s.0 += e.weight;
            s.1 += 1;
        }
    }
    let mut out = LocationAttention::new();
    for ((l, k), (total, n)) in acc {
        out.entry(g.locations()[l].clone())
            .or_default()
            .insert(g.entities()[k].id.clone(), total / n as f64);
    }
    let types = g.entities().iter().map(|e| (e.id.clone(), e.kind.clone())).collect();
    Ok((out, types))
}

/// Dates `D` whose prediction window (ending `D - horizon`) is available.
pub fn inference_dates(dataset: &Dataset, model: &Forecaster) -> Vec<NaiveDate> {
    let cfg = &model.config;
    let h = Duration::days(cfg.horizon as i64);
    (cfg.window.saturating_sub(1)..dataset.len())
        .filter(|&e| dataset.has_history(e, cfg))
        .map(|e| dataset.date(e) + h)
        .collect()
}

/// Builds the full risk table: high sets from `dates`, attention from the
/// inference-mode forward pass whose prediction targets each high-set date.
pub fn discover_risk_factors(
    model: &Forecaster,
    dataset: &Dataset,
    cache: &mut SampleCache,
    dates: &[NaiveDate],
    kind: TargetKind,
    denominator: Denominator,
) -> Result<RiskScoreTable> {
    let h = Duration::days(model.config.horizon as i64);
    let mut table = RiskScoreTable::default();
    for loc in dataset.locations() {
        table
            .high_sets
            .insert(loc.clone(), build_high_set(dataset.stats(), loc, dates, kind)?);
    }
    let needed: BTreeSet<NaiveDate> = table.high_sets.values().flatten().copied().collect();
    let mut attention = BTreeMap::new();
    let mut types = BTreeMap::new();
    for d in needed {
        let end = dataset
            .index_of(d - h)
            .ok_or_else(|| Error::Coverage(format!("no inference window for {d}")))?;
        let sample = cache.get(dataset, end, &model.config)?;
        let (att, t) = location_attention(model, &sample)?;
        attention.insert(d, att);
        types.extend(t);
    }
    for (loc, high) in &table.high_sets {
        for (entity, score) in risk_scores(&attention, high, loc, denominator)? {
            table.rows.push(RiskRow {
                location: loc.clone(),
                entity_type: types.get(&entity).cloned().unwrap_or_default(),
                entity,
                score,
            });
        }
    }
    Ok(table)
}
