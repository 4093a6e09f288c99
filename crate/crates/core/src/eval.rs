//! Error metrics, running error curves, naive baselines and report files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};

use crate::config::TargetKind;
use crate::error::{Error, Result};
use crate::graph::StatsTable;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub cutoff_date: NaiveDate,
    pub horizon: usize,
    pub location: String,
    pub target: TargetKind,
    pub predicted: f64,
    /// Observed value on `cutoff_date + horizon`, if already known.
    pub actual: Option<f64>,
}

impl PredictionRecord {
    pub fn target_date(&self) -> NaiveDate {
        self.cutoff_date + Duration::days(self.horizon as i64)
    }
}

fn scored(records: &[PredictionRecord]) -> Result<Vec<(f64, f64)>> {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.actual.map(|y| (y, r.predicted)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("no records with known actual values".into()));
    }
    Ok(pairs)
}

/// Mean absolute error over records with known actuals.
pub fn mae(records: &[PredictionRecord]) -> Result<f64> {
    let pairs = scored(records)?;
    Ok(pairs.iter().map(|(y, p)| (y - p).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Mean of `|y - p| / |y + p|`, with `0/0` counted as 0.
pub fn smape(records: &[PredictionRecord]) -> Result<f64> {
    let pairs = scored(records)?;
    let total: f64 = pairs
        .iter()
        .map(|(y, p)| {
            let den = (y + p).abs();
            if den == 0.0 {
                0.0
            } else {
                (y - p).abs() / den
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    Mae,
    Smape,
}

impl MetricKind {
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Mae => "mae",
            MetricKind::Smape => "smape",
        }
    }

    pub fn compute(self, records: &[PredictionRecord]) -> Result<f64> {
        match self {
            MetricKind::Mae => mae(records),
            MetricKind::Smape => smape(records),
        }
    }
}

/// For each distinct cutoff date D, the metric over all records with cutoff ≤ D.
pub fn smoothed_curve(records: &[PredictionRecord], kind: MetricKind) -> Vec<(NaiveDate, f64)> {
    let mut by_date: BTreeMap<NaiveDate, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.actual.is_some()) {
        by_date.entry(r.cutoff_date).or_default().push(r.clone());
    }
    let mut seen = Vec::new();
    let mut out = Vec::with_capacity(by_date.len());
    for (date, rs) in by_date {
        seen.extend(rs);
        if let Ok(v) = kind.compute(&seen) {
            out.push((date, v));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Baseline {
    Persistence,
    SeasonalNaive7,
    MovingAverage7,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::Persistence,
        Baseline::SeasonalNaive7,
        Baseline::MovingAverage7,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Baseline::Persistence => "persistence",
            Baseline::SeasonalNaive7 => "seasonal_naive_7",
            Baseline::MovingAverage7 => "moving_average_7",
        }
    }

    /// Forecast for `history[last] + horizon` days from a chronological series
    /// whose final entry is the cutoff day.
    pub fn forecast(self, history: &[f64], horizon: usize) -> Result<f64> {
        let n = history.len();
        let short =
            |need: usize| Error::Coverage(format!("{} needs {need} days of history, {n} available", self.label()));
        match self {
            Baseline::Persistence => history.last().copied().ok_or_else(|| short(1)),
            Baseline::SeasonalNaive7 => {
                // latest observed day with the target's weekday
                let back = 7 * horizon.div_ceil(7) - horizon;
                if back >= n {
                    return Err(short(back + 1));
                }
                Ok(history[n - 1 - back])
            }
            Baseline::MovingAverage7 => {
                if n < 7 {
                    return Err(short(7));
                }
                Ok(history[n - 7..].iter().sum::<f64>() / 7.0)
            }
        }
    }
}

/// Baseline records for every (cutoff, location) pair, reading only statistics
/// dated on or before each cutoff, except for the actual value.
pub fn baseline_records(
    stats: &StatsTable,
    locations: &[String],
    cutoffs: &[NaiveDate],
    horizon: usize,
    target: TargetKind,
    method: Baseline,
) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for loc in locations {
        let series = stats.series(loc, target);
        for &cutoff in cutoffs {
            let history: Vec<f64> = series.iter().filter(|(d, _)| *d <= cutoff).map(|(_, v)| *v).collect();
            if series.iter().rfind(|(d, _)| *d <= cutoff).map(|(d, _)| *d) != Some(cutoff) {
                return Err(Error::Coverage(format!("no statistics for `{loc}` on cutoff {cutoff}")));
            }
            let predicted = method.forecast(&history, horizon)?;
            let target_date = cutoff + Duration::days(horizon as i64);
            out.push(PredictionRecord {
                cutoff_date: cutoff,
                horizon,
                location: loc.clone(),
                target,
                predicted,
                actual: stats.value(loc, target_date, target),
            });
        }
    }
    out.sort_by(|a, b| {
        a.cutoff_date
            .cmp(&b.cutoff_date)
            .then_with(|| a.location.cmp(&b.location))
    });
    Ok(out)
}

pub const PREDICTION_HEADER: [&str; 6] = ["cutoff_date", "horizon", "location", "target", "predicted", "actual"];

pub fn write_predictions<W: Write>(w: W, records: &[PredictionRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PREDICTION_HEADER)?;
    for r in records {
        wtr.write_record([
            r.cutoff_date.format("%Y-%m-%d").to_string(),
            r.horizon.to_string(),
            r.location.clone(),
            r.target.to_string(),
            r.predicted.to_string(),
            r.actual.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(PREDICTION_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", PREDICTION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |m: String| Error::Parse { line, message: m };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", rec.len())));
        }
        let cutoff_date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        let horizon = rec[1].parse().map_err(|_| bad(format!("bad horizon `{}`", &rec[1])))?;
        let target = rec[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        let predicted: f64 = rec[4]
            .parse()
            .map_err(|_| bad(format!("bad prediction `{}`", &rec[4])))?;
        let actual = if rec[5].is_empty() {
            None
        } else {
            let a: f64 = rec[5].parse().map_err(|_| bad(format!("bad actual `{}`", &rec[5])))?;
            if !(a >= 0.0) {
                return Err(bad(format!("actual value must be non-negative, got {a}")));
            }
            Some(a)
        };
        if !predicted.is_finite() {
            return Err(bad("prediction must be finite".into()));
        }
        out.push(PredictionRecord {
            cutoff_date,
            horizon,
            location: rec[2].to_string(),
            target,
            predicted,
            actual,
        });
    }
    Ok(out)
}

/// Aggregate metric rows `(horizon, metric label, value)` per horizon.
pub fn metric_rows(records: &[PredictionRecord], prefix: &str) -> Vec<(usize, String, f64)> {
    let mut by_h: BTreeMap<usize, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_h.entry(r.horizon).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (h, rs) in by_h {
        for kind in [MetricKind::Mae, MetricKind::Smape] {
            if let Ok(v) = kind.compute(&rs) {
                rows.push((h, format!("{prefix}{}", kind.label()), v));
            }
        }
    }
    rows
}

pub fn write_metrics<W: Write>(w: W, rows: &[(usize, String, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["horizon", "metric", "value"])?;
    for (h, m, v) in rows {
        wtr.write_record([h.to_string(), m.clone(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Running curves per horizon, labelled `<metric>_h<horizon>`.
pub fn curve_rows(records: &[PredictionRecord], prefix: &str) -> Vec<(NaiveDate, String, f64)> {
    let mut by_h: BTreeMap<usize, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_h.entry(r.horizon).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (h, rs) in by_h {
        for kind in [MetricKind::Mae, MetricKind::Smape] {
            for (d, v) in smoothed_curve(&rs, kind) {
                rows.push((d, format!("{prefix}{}_h{h}", kind.label()), v));
            }
        }
    }
    rows
}

pub fn write_curves<W: Write>(w: W, rows: &[(NaiveDate, String, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "metric", "value"])?;
    for (d, m, v) in rows {
        wtr.write_record([d.format("%Y-%m-%d").to_string(), m.clone(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
