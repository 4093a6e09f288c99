//! A tiny deterministic dataset for gradient verification and smoke tests.

use chrono::{Duration, NaiveDate};
use epiwatch_tensor::{finite_diff_check, GradCheckOptions, GradCheckReport, Mode, Tape};
use rand::Rng;

use crate::config::ForecastConfig;
use crate::dataset::{Dataset, WindowSample};
use crate::error::Result;
use crate::graph::{DailyStats, Entity, Flow, GraphSnapshot, Location, StatsTable};
use crate::model::{seeded_stream, Forecaster, DROPOUT_STREAM};

pub const TINY_LOCATIONS: usize = 3;
pub const TINY_ENTITIES: usize = 5;
/// Seed of the built-in gradient-check fixture.
pub const TINY_SEED: u64 = 7;

/// Configuration used with [`tiny_dataset`]: window 3, two heads, hidden width 8.
pub fn tiny_config() -> ForecastConfig {
    ForecastConfig {
        horizon: 1,
        window: 3,
        d_e: 4,
        d_t: 2,
        heads: 2,
        dgnn_hidden: 8,
        rnn_hidden: 8,
        validation_size: 1,
        normalize: true,
        max_epochs: 5,
        patience: 5,
        ..ForecastConfig::default()
    }
}

/// `days` consecutive snapshots of 3 locations and 5 entities, with statistics
/// starting `d_t` days before the first snapshot.
pub fn tiny_dataset(seed: u64, days: usize, config: &ForecastConfig) -> Result<Dataset> {
    let mut rng = seeded_stream(seed, 7);
    let start = NaiveDate::from_ymd_opt(2020, 5, 15).expect("valid date");
    let loc_ids: Vec<String> = (0..TINY_LOCATIONS).map(|i| format!("L{i}")).collect();
    let entities: Vec<Entity> = (0..TINY_ENTITIES)
        .map(|k| Entity {
            id: format!("e{k}"),
            name: format!("entity {k}"),
            kind: if k % 2 == 0 { "EVENT" } else { "HASHTAG" }.into(),
            embedding: (0..config.d_e).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            count: 1 + k as u64,
        })
        .collect();
    let loc_embedding: Vec<f64> = (0..config.d_e).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut snapshots = Vec::with_capacity(days);
    for d in 0..days {
        let locations = loc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| Location {
                id: id.clone(),
                embedding: (i == 0).then(|| loc_embedding.clone()),
            })
            .collect();
        let mentions = (0..TINY_LOCATIONS)
            .flat_map(|l| {
                let a = (l + d) % TINY_ENTITIES;
                let b = (2 * l + 3 * d + 1) % TINY_ENTITIES;
                [
                    (loc_ids[l].clone(), format!("e{a}")),
                    (loc_ids[l].clone(), format!("e{b}")),
                ]
            })
            .collect();
        let relations = vec![
            ("e0".to_string(), format!("e{}", 1 + d % 4)),
            ("e2".to_string(), "e3".to_string()),
        ];
        snapshots.push(GraphSnapshot::from_parts(
            start + Duration::days(d as i64),
            locations,
            entities.clone(),
            relations,
            mentions,
            vec![Flow {
                source: "L0".into(),
                target: "L2".into(),
                weight: 3.0,
            }],
            vec![("L0".into(), "L1".into())],
        )?);
    }
    let mut stats = StatsTable::new();
    for d in -(config.d_t as i64)..days as i64 {
        for (i, id) in loc_ids.iter().enumerate() {
            let cases = (2.0 + i as f64 + rng.gen_range(0.0..3.0)).round();
            stats.insert(
                id,
                start + Duration::days(d),
                DailyStats {
                    new_cases: cases,
                    new_deaths: (cases / 4.0).floor(),
                },
            )?;
        }
    }
    Dataset::new(snapshots, stats)
}

/// Compares end-to-end tape gradients of the training loss on the tiny
/// fixture against central differences, over every parameter coordinate.
pub fn tiny_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let config = tiny_config();
    let dataset = tiny_dataset(seed, config.window + config.horizon, &config)?;
    let mut model = Forecaster::new(&config, dataset.locations(), seed)?;
    if config.normalize {
        model.scales = dataset.location_scales(dataset.date(config.window - 1), &config);
    }
    let sample = WindowSample::build(&dataset, config.window - 1, &config)?;
    let target_day = dataset.date(config.window - 1) + Duration::days(config.horizon as i64);
    let truth = model.scale_targets(&dataset.targets(target_day, &config)?);
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let report = finite_diff_check(
        &model.store,
        |tape: &mut Tape, store| {
            let mut rng = seeded_stream(seed, DROPOUT_STREAM);
            let fwd = model
                .forward(tape, store, &sample, Mode::Train, &mut rng)
                .map_err(|e| epiwatch_tensor::TensorError::Config(e.to_string()))?;
            let y = tape.constant(truth.clone());
            tape.mse(fwd.prediction, y)
        },
        &opts,
    )?;
    Ok(report)
}
