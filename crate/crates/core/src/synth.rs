//! Synthetic corpora with planted, lagged event effects.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DailyStats, Entity, Flow, GraphSnapshot, Location, StatsTable};
use crate::model::seeded_stream;

const BASE_STREAM: u64 = 10;
const MENTION_STREAM: u64 = 11;
const EMBEDDING_STREAM: u64 = 12;
const MOBILITY_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub locations: usize,
    pub background_entities: usize,
    pub drivers: usize,
    /// Days from a driver mention to the start of its effect.
    pub lag: usize,
    /// Counts are multiplied by `1 + effect` while an effect is active.
    pub effect: f64,
    pub effect_duration: usize,
    /// Probability a given driver is mentioned at a given location on a given day.
    pub driver_mention_prob: f64,
    /// Mean number of background entities mentioned per location and day.
    pub background_rate: f64,
    /// Probability a background mention uses a near-duplicate alias.
    pub alias_prob: f64,
    pub relation_prob: f64,
    pub mobility_prob: f64,
    pub level_min: f64,
    pub level_max: f64,
    /// Mean reversion of the log-count process.
    pub ar_coefficient: f64,
    pub noise_sd: f64,
    pub death_rate: f64,
    pub embedding_dim: usize,
    /// Statistics begin this many days before the first snapshot.
    pub history_days: usize,
    pub window: usize,
    pub max_horizon: usize,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            locations: 10,
            background_entities: 20,
            drivers: 3,
            lag: 10,
            effect: 0.5,
            effect_duration: 10,
            driver_mention_prob: 0.015,
            background_rate: 1.5,
            alias_prob: 0.1,
            relation_prob: 0.2,
            mobility_prob: 0.3,
            level_min: 50.0,
            level_max: 500.0,
            ar_coefficient: 0.8,
            noise_sd: 0.1,
            death_rate: 0.02,
            embedding_dim: 16,
            history_days: 7,
            window: 7,
            max_horizon: 14,
            start: NaiveDate::from_ymd_opt(2020, 5, 15).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self, days: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.locations < 1 || self.drivers < 1 || self.lag < 1 || self.effect_duration < 1 {
            return fail("locations, drivers, lag and effect_duration must be at least 1".into());
        }
        if self.embedding_dim < 2 {
            return fail("embedding_dim must be at least 2".into());
        }
        let rates = [
            self.effect,
            self.driver_mention_prob,
            self.background_rate,
            self.alias_prob,
            self.relation_prob,
            self.mobility_prob,
            self.noise_sd,
            self.death_rate,
            self.ar_coefficient,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return fail("rates must be finite and non-negative".into());
        }
        for p in [
            self.driver_mention_prob,
            self.alias_prob,
            self.relation_prob,
            self.mobility_prob,
        ] {
            if p > 1.0 {
                return fail(format!("probability {p} exceeds 1"));
            }
        }
        if !(self.level_min > 0.0 && self.level_min <= self.level_max && self.level_max.is_finite()) {
            return fail("base levels must satisfy 0 < level_min <= level_max".into());
        }
        if self.ar_coefficient >= 1.0 {
            return fail("ar_coefficient must be below 1".into());
        }
        if days <= self.lag + self.window + self.max_horizon {
            return fail(format!(
                "{days} days is too short; need more than lag + window + max_horizon = {}",
                self.lag + self.window + self.max_horizon
            ));
        }
        Ok(())
    }
}

/// One driver mention and the day span it affects.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlantedEffect {
    pub driver: String,
    pub location: String,
    pub mention_date: NaiveDate,
    pub effect_start: NaiveDate,
    pub effect_end: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub snapshots: Vec<GraphSnapshot>,
    pub stats: StatsTable,
    pub manifest: Vec<PlantedEffect>,
}

impl SynthCorpus {
    /// Driver ids in manifest order of first appearance.
    pub fn drivers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.manifest {
            if !out.contains(&p.driver) {
                out.push(p.driver.clone());
            }
        }
        out
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs give an isotropic direction
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn location_ids(spec: &SynthSpec) -> Vec<String> {
    (0..spec.locations).map(|i| format!("loc{i:02}")).collect()
}

/// The count process without any event effects, per location over
/// `history_days + days` days.
pub fn base_process(spec: &SynthSpec, days: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded_stream(spec.seed, BASE_STREAM);
    let total = spec.history_days + days;
    (0..spec.locations)
        .map(|_| {
            let level: f64 = rng.gen_range(spec.level_min..=spec.level_max);
            let mu = level.ln();
            let stationary = spec.noise_sd / (1.0 - spec.ar_coefficient * spec.ar_coefficient).sqrt();
            let mut x = mu + stationary * normal(&mut rng);
            (0..total)
                .map(|_| {
                    x = mu + spec.ar_coefficient * (x - mu) + spec.noise_sd * normal(&mut rng);
                    x.exp()
                })
                .collect()
        })
        .collect()
}

/// Generates snapshots for `days` consecutive days plus statistics starting
/// `history_days` earlier.
pub fn generate(spec: &SynthSpec, days: usize) -> Result<SynthCorpus> {
    spec.validate(days)?;
    let locs = location_ids(spec);
    let kinds = ["EVENT", "HASHTAG", "ORGANIZATION"];

    let mut erng = seeded_stream(spec.seed, EMBEDDING_STREAM);
    let loc_embeddings: Vec<Vec<f64>> = (0..spec.locations)
        .map(|_| unit_vector(&mut erng, spec.embedding_dim))
        .collect();
    let background: Vec<Entity> = (0..spec.background_entities)
        .map(|k| Entity {
            id: format!("bg{k:03}"),
            name: format!("topic {k}"),
            kind: kinds[k % kinds.len()].to_string(),
            embedding: unit_vector(&mut erng, spec.embedding_dim),
            count: 0,
        })
        .collect();
    let aliases: Vec<Entity> = background
        .iter()
        .map(|e| {
            let jitter: Vec<f64> = e.embedding.iter().map(|x| x + 0.01 * normal(&mut erng)).collect();
            Entity {
                id: format!("{}a", e.id),
                name: format!("{} (variant)", e.name),
                kind: e.kind.clone(),
                embedding: jitter,
                count: 0,
            }
        })
        .collect();
    let mut drivers: Vec<Entity> = Vec::with_capacity(spec.drivers);
    for k in 0..spec.drivers {
        let mut tries = 0;
        let emb = loop {
            let v = unit_vector(&mut erng, spec.embedding_dim);
            let far = background
                .iter()
                .chain(&aliases)
                .all(|b| distance(&b.embedding, &v) >= 0.5);
            if far {
                break v;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Config(
                    "cannot place driver embeddings 0.5 away from background; raise embedding_dim".into(),
                ));
            }
        };
        drivers.push(Entity {
            id: format!("drv{k:02}"),
            name: format!("driver event {k}"),
            kind: "EVENT".into(),
            embedding: emb,
            count: 0,
        });
    }

    // mentions: per day, list of (location index, entity, tweet count)
    let mut mrng = seeded_stream(spec.seed, MENTION_STREAM);
    let mut daily: Vec<Vec<(usize, Entity, u64)>> = Vec::with_capacity(days);
    let mut manifest = Vec::new();
    for d in 0..days {
        let date = spec.start + Duration::days(d as i64);
        let mut today = Vec::new();
        for l in 0..spec.locations {
            for drv in &drivers {
                if mrng.gen::<f64>() < spec.driver_mention_prob {
                    let tweets = mrng.gen_range(1..=3);
                    today.push((l, drv.clone(), tweets));
                    manifest.push(PlantedEffect {
                        driver: drv.id.clone(),
                        location: locs[l].clone(),
                        mention_date: date,
                        effect_start: date + Duration::days(spec.lag as i64),
                        effect_end: date + Duration::days((spec.lag + spec.effect_duration - 1) as i64),
                    });
                }
            }
            if !background.is_empty() {
                for _ in 0..poisson(&mut mrng, spec.background_rate) {
                    let k = mrng.gen_range(0..background.len());
                    let e = if mrng.gen::<f64>() < spec.alias_prob {
                        aliases[k].clone()
                    } else {
                        background[k].clone()
                    };
                    let tweets = mrng.gen_range(1..=3);
                    today.push((l, e, tweets));
                }
            }
        }
        daily.push(today);
    }

    // statistics: base process times active effects
    let base = base_process(spec, days);
    let first_stat = spec.start - Duration::days(spec.history_days as i64);
    let mut active: BTreeMap<(usize, NaiveDate), bool> = BTreeMap::new();
    let loc_index: BTreeMap<&str, usize> = locs.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    for p in &manifest {
        let mut d = p.effect_start;
        while d <= p.effect_end {
            active.insert((loc_index[p.location.as_str()], d), true);
            d += Duration::days(1);
        }
    }
    let mut stats = StatsTable::new();
    for (l, series) in base.iter().enumerate() {
        for (i, b) in series.iter().enumerate() {
            let date = first_stat + Duration::days(i as i64);
            let mult = if active.contains_key(&(l, date)) {
                1.0 + spec.effect
            } else {
                1.0
            };
            let cases = (b * mult).round();
            stats.insert(
                &locs[l],
                date,
                DailyStats {
                    new_cases: cases,
                    new_deaths: (spec.death_rate * cases).round(),
                },
            )?;
        }
    }

    // snapshots
    let mut brng = seeded_stream(spec.seed, MOBILITY_STREAM);
    let mut snapshots = Vec::with_capacity(days);
    for (d, today) in daily.into_iter().enumerate() {
        let date = spec.start + Duration::days(d as i64);
        let mut entities: Vec<Entity> = Vec::new();
        let mut mentions = Vec::new();
        for (l, e, tweets) in today {
            match entities.iter_mut().find(|x| x.id == e.id) {
                Some(x) => x.count += tweets,
                None => entities.push(Entity {
                    count: tweets,
                    ..e.clone()
                }),
            }
            for _ in 0..tweets {
                mentions.push((locs[l].clone(), e.id.clone()));
            }
        }
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        let mut relations = Vec::new();
        for i in 0..entities.len() {
            for j in i + 1..entities.len() {
                if brng.gen::<f64>() < spec.relation_prob {
                    relations.push((entities[i].id.clone(), entities[j].id.clone()));
                }
            }
        }
        let mut mobility = Vec::new();
        for i in 0..spec.locations {
            for j in 0..spec.locations {
                if i != j && brng.gen::<f64>() < spec.mobility_prob {
                    mobility.push(Flow {
                        source: locs[i].clone(),
                        target: locs[j].clone(),
                        weight: brng.gen_range(1.0..100.0_f64).round(),
                    });
                }
            }
        }
        let adjacency = (0..spec.locations)
            .filter(|_| spec.locations > 1)
            .map(|i| (locs[i].clone(), locs[(i + 1) % spec.locations].clone()))
            .collect();
        let locations = locs
            .iter()
            .zip(&loc_embeddings)
            .map(|(id, e)| Location {
                id: id.clone(),
                embedding: Some(e.clone()),
            })
            .collect();
        snapshots.push(GraphSnapshot::from_parts(
            date, locations, entities, relations, mentions, mobility, adjacency,
        )?);
    }
    manifest.sort();
    Ok(SynthCorpus {
        snapshots,
        stats,
        manifest,
    })
}

pub const MANIFEST_HEADER: [&str; 5] = [
    "driver_entity",
    "location",
    "mention_date",
    "effect_start",
    "effect_end",
];

pub fn write_manifest<W: Write>(w: W, manifest: &[PlantedEffect]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(MANIFEST_HEADER)?;
    let f = |d: NaiveDate| d.format("%Y-%m-%d").to_string();
    for p in manifest {
        wtr.write_record([
            p.driver.clone(),
            p.location.clone(),
            f(p.mention_date),
            f(p.effect_start),
            f(p.effect_end),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(r: R) -> Result<Vec<PlantedEffect>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let date = |i: usize| {
            NaiveDate::parse_from_str(&rec[i], "%Y-%m-%d").map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        };
        out.push(PlantedEffect {
            driver: rec[0].to_string(),
            location: rec[1].to_string(),
            mention_date: date(2)?,
            effect_start: date(3)?,
            effect_end: date(4)?,
        });
    }
    Ok(out)
}
