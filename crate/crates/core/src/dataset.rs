//! Snapshot sequences paired with statistics, cut into model-ready windows.

use std::collections::HashMap;
use std::rc::Rc;

use chrono::{Duration, NaiveDate};

use crate::config::ForecastConfig;
use crate::dgnn::NeighborPlan;
use crate::error::{Error, Result};
use crate::graph::{
    aggregate_window, build_features, FeatureMatrix, GraphOptions, GraphSnapshot, SpatialTemporalGraph, StatsTable,
};

#[derive(Debug, Clone)]
pub struct Dataset {
    snapshots: Vec<GraphSnapshot>,
    stats: StatsTable,
    locations: Vec<String>,
}

impl Dataset {
    /// Snapshots are sorted by date and must then cover consecutive days with
    /// one shared set of locations.
    pub fn new(mut snapshots: Vec<GraphSnapshot>, stats: StatsTable) -> Result<Self> {
        snapshots.sort_by_key(|s| s.date);
        let Some(first) = snapshots.first() else {
            return Err(Error::Coverage("no snapshots supplied".into()));
        };
        let locations: Vec<String> = first.locations.iter().map(|l| l.id.clone()).collect();
        let mut sorted = locations.clone();
        sorted.sort();
        for w in snapshots.windows(2) {
            if w[0].date.succ_opt() != Some(w[1].date) {
                return Err(Error::Window(format!(
                    "snapshots must cover consecutive days; {} is followed by {}",
                    w[0].date, w[1].date
                )));
            }
        }
        for s in &snapshots {
            let mut ids: Vec<String> = s.locations.iter().map(|l| l.id.clone()).collect();
            ids.sort();
            if ids != sorted {
                return Err(Error::Window(format!(
                    "location set on {} differs from {}",
                    s.date, first.date
                )));
            }
        }
        Ok(Dataset {
            snapshots,
            stats,
            locations,
        })
    }

    pub fn snapshots(&self) -> &[GraphSnapshot] {
        &self.snapshots
    }

    pub fn stats(&self) -> &StatsTable {
        &self.stats
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.snapshots[index].date
    }

    pub fn first_date(&self) -> NaiveDate {
        self.snapshots[0].date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.snapshots[self.snapshots.len() - 1].date
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.first_date()).num_days();
        (0..self.len() as i64).contains(&offset).then_some(offset as usize)
    }

    /// Per-location target values on `date`, in location order.
    pub fn targets(&self, date: NaiveDate, config: &ForecastConfig) -> Result<Vec<f64>> {
        self.locations
            .iter()
            .map(|l| self.stats.require(l, date, config.target))
            .collect()
    }

    /// Whether every location copy of the window ending at `end` has `d_t` days of history.
    pub fn has_history(&self, end: usize, config: &ForecastConfig) -> bool {
        if end + 1 < config.window {
            return false;
        }
        let start = self.date(end + 1 - config.window);
        let from = start - Duration::days(config.d_t as i64);
        let to = self.date(end) - Duration::days(1);
        self.locations.iter().all(|l| {
            let mut d = from;
            while d <= to {
                if self.stats.get(l, d).is_none() {
                    return false;
                }
                d += Duration::days(1);
            }
            true
        })
    }

    /// Per-location mean of the target over all statistics dated on or before
    /// `cutoff`, floored at 1.
    pub fn location_scales(&self, cutoff: NaiveDate, config: &ForecastConfig) -> Vec<f64> {
        self.locations
            .iter()
            .map(|l| {
                let vals: Vec<f64> = self
                    .stats
                    .series(l, config.target)
                    .into_iter()
                    .filter(|(d, _)| *d <= cutoff)
                    .map(|(_, v)| v)
                    .collect();
                if vals.is_empty() {
                    1.0
                } else {
                    (vals.iter().sum::<f64>() / vals.len() as f64).max(1.0)
                }
            })
            .collect()
    }
}

impl From<&ForecastConfig> for GraphOptions {
    fn from(c: &ForecastConfig) -> Self {
        GraphOptions {
            drop_entity_entity_edges: c.ablation.drop_entity_entity_edges,
            drop_location_entity_edges: c.ablation.drop_location_entity_edges,
            self_loops: c.ablation.self_loops,
            mobility_threshold: c.mobility_threshold,
            merge: c.merge_entities.then_some((c.dbscan_eps, c.dbscan_min_pts)),
        }
    }
}

/// Everything the model needs for one window, independent of parameters.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub end: NaiveDate,
    pub graph: SpatialTemporalGraph,
    pub features: FeatureMatrix,
    /// One plan per propagation layer; the last only targets location copies.
    pub plans: Vec<NeighborPlan>,
    pub learned_rows: Rc<[Option<usize>]>,
    /// Row indices of each day's location copies, chronological.
    pub day_rows: Vec<Rc<[usize]>>,
}

impl WindowSample {
    pub fn build(dataset: &Dataset, end: usize, config: &ForecastConfig) -> Result<Self> {
        if end >= dataset.len() || end + 1 < config.window {
            return Err(Error::Coverage(format!(
                "no complete {}-day window ends at snapshot index {end}",
                config.window
            )));
        }
        let window = &dataset.snapshots()[end + 1 - config.window..=end];
        let graph = aggregate_window(window, &GraphOptions::from(config))?;
        let features = build_features(&graph, dataset.stats(), config.target, config.d_e, config.d_t)?;
        let mut plans = Vec::with_capacity(config.dgnn_layers);
        if !config.ablation.bypass_dgnn {
            for layer in 0..config.dgnn_layers {
                let targets = if layer + 1 == config.dgnn_layers {
                    graph.num_location_copies()
                } else {
                    graph.num_nodes()
                };
                plans.push(NeighborPlan::new(&graph, targets)?);
            }
        }
        let day_rows = (0..graph.window_len())
            .map(|d| {
                (0..graph.num_locations())
                    .map(|l| graph.copy_index(l, d))
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        Ok(WindowSample {
            end: dataset.date(end),
            learned_rows: features.learned_location.clone().into(),
            graph,
            features,
            plans,
            day_rows,
        })
    }

    pub fn needs_learned_embeddings(&self) -> bool {
        self.learned_rows.iter().any(Option::is_some)
    }
}

/// Lazily built windows keyed by end index.
#[derive(Debug, Default)]
pub struct SampleCache {
    samples: HashMap<usize, Rc<WindowSample>>,
}

impl SampleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, dataset: &Dataset, end: usize, config: &ForecastConfig) -> Result<Rc<WindowSample>> {
        if let Some(s) = self.samples.get(&end) {
            return Ok(s.clone());
        }
        let s = Rc::new(WindowSample::build(dataset, end, config)?);
        self.samples.insert(end, s.clone());
        Ok(s)
    }
}

/// Window ends usable for a model trained at `cutoff` for `config.horizon`:
/// complete windows with full history whose target day is on or before the cutoff.
pub fn training_ends(dataset: &Dataset, cutoff: NaiveDate, config: &ForecastConfig) -> Vec<usize> {
    let horizon = Duration::days(config.horizon as i64);
    (config.window.saturating_sub(1)..dataset.len())
        .filter(|&e| dataset.date(e) + horizon <= cutoff)
        .filter(|&e| {
            let target = dataset.date(e) + horizon;
            dataset.has_history(e, config)
                && dataset
                    .locations()
                    .iter()
                    .all(|l| dataset.stats().get(l, target).is_some())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTask {
    pub cutoff: NaiveDate,
    pub horizon: usize,
    pub train_ends: Vec<usize>,
    /// The most recent ends, held out for early stopping.
    pub validation_ends: Vec<usize>,
}

/// One task per (cutoff, horizon).
pub fn build_tasks(
    dataset: &Dataset,
    cutoffs: &[NaiveDate],
    horizons: &[usize],
    config: &ForecastConfig,
) -> Result<Vec<TrainingTask>> {
    let mut tasks = Vec::new();
    for &horizon in horizons {
        let cfg = ForecastConfig {
            horizon,
            ..config.clone()
        };
        for &cutoff in cutoffs {
            let ends = training_ends(dataset, cutoff, &cfg);
            if ends.len() <= cfg.validation_size {
                return Err(Error::Coverage(format!(
                    "cutoff {cutoff}, horizon {horizon}: {} usable windows, need more than {} (validation size)",
                    ends.len(),
                    cfg.validation_size
                )));
            }
            let split = ends.len() - cfg.validation_size;
            tasks.push(TrainingTask {
                cutoff,
                horizon,
                train_ends: ends[..split].to_vec(),
                validation_ends: ends[split..].to_vec(),
            });
        }
    }
    Ok(tasks)
}
