//! Walk-forward training and prediction over a range of cutoff dates.

use std::rc::Rc;

use chrono::{Duration, NaiveDate};

use crate::config::ForecastConfig;
use crate::dataset::{build_tasks, Dataset, SampleCache, TrainingTask};
use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::model::Forecaster;
use crate::train::{train, Example, TrainTrace};

/// Seed for one (cutoff, horizon) task derived from the root seed.
pub fn task_seed(root: u64, cutoff: NaiveDate, horizon: usize) -> u64 {
    let days = cutoff.signed_duration_since(NaiveDate::MIN).num_days() as u64;
    let mut z = root
        .wrapping_add(days.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((horizon as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn examples(
    dataset: &Dataset,
    cache: &mut SampleCache,
    ends: &[usize],
    config: &ForecastConfig,
) -> Result<Vec<Example>> {
    ends.iter()
        .map(|&e| {
            let target = dataset.date(e) + Duration::days(config.horizon as i64);
            Ok(Example {
                sample: cache.get(dataset, e, config)?,
                targets: dataset.targets(target, config)?,
            })
        })
        .collect()
}

/// Trains a fresh model for one task.
pub fn train_task(
    dataset: &Dataset,
    cache: &mut SampleCache,
    task: &TrainingTask,
    config: &ForecastConfig,
) -> Result<(Forecaster, TrainTrace)> {
    let cfg = ForecastConfig {
        horizon: task.horizon,
        ..config.clone()
    };
    let seed = task_seed(cfg.seed, task.cutoff, task.horizon);
    let mut model = Forecaster::new(&cfg, dataset.locations(), seed)?;
    if cfg.normalize {
        model.scales = dataset.location_scales(task.cutoff, &cfg);
    }
    let train_set = examples(dataset, cache, &task.train_ends, &cfg)?;
    let validation = examples(dataset, cache, &task.validation_ends, &cfg)?;
    let trace = train(&mut model, &train_set, &validation, seed)?;
    Ok((model, trace))
}

/// Predictions for the window ending on `cutoff`, one record per location.
pub fn predict_at(
    model: &Forecaster,
    dataset: &Dataset,
    cache: &mut SampleCache,
    cutoff: NaiveDate,
) -> Result<Vec<PredictionRecord>> {
    let cfg = &model.config;
    let end = dataset
        .index_of(cutoff)
        .ok_or_else(|| Error::Coverage(format!("no snapshot on cutoff date {cutoff}")))?;
    let sample: Rc<_> = cache.get(dataset, end, cfg)?;
    let pred = model.predict(&sample)?;
    let target_date = cutoff + Duration::days(cfg.horizon as i64);
    Ok(model
        .locations
        .iter()
        .zip(pred)
        .map(|(loc, p)| PredictionRecord {
            cutoff_date: cutoff,
            horizon: cfg.horizon,
            location: loc.clone(),
            target: cfg.target,
            predicted: p,
            actual: dataset.stats().value(loc, target_date, cfg.target),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct TaskReport {
    pub cutoff: NaiveDate,
    pub horizon: usize,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, Default)]
pub struct WalkForward {
    pub records: Vec<PredictionRecord>,
    pub reports: Vec<TaskReport>,
}

/// For each horizon, walks through `cutoffs` in order. A model is trained on
/// data up to a cutoff and reused for the next `retrain_every - 1` cutoffs.
pub fn walk_forward(
    dataset: &Dataset,
    config: &ForecastConfig,
    cutoffs: &[NaiveDate],
    horizons: &[usize],
) -> Result<WalkForward> {
    config.validate()?;
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort();
    cutoffs.dedup();
    let mut cache = SampleCache::new();
    let mut out = WalkForward::default();
    for &h in horizons {
        let cfg = ForecastConfig {
            horizon: h,
            ..config.clone()
        };
        let mut model: Option<Forecaster> = None;
        for (i, &cutoff) in cutoffs.iter().enumerate() {
            if i % cfg.retrain_every == 0 {
                let task = build_tasks(dataset, &[cutoff], &[h], &cfg)?.remove(0);
                let (m, trace) = train_task(dataset, &mut cache, &task, &cfg)?;
                out.reports.push(TaskReport {
                    cutoff,
                    horizon: h,
                    trace,
                });
                model = Some(m);
            }
            let m = model.as_ref().expect("trained at the first cutoff");
            out.records.extend(predict_at(m, dataset, &mut cache, cutoff)?);
        }
    }
    Ok(out)
}
