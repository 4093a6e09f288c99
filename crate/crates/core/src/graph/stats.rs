//! Daily per-location case and fatality counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::config::TargetKind;
use crate::error::{Error, Result};

pub const STATS_HEADER: [&str; 4] = ["date", "location", "new_cases", "new_deaths"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyStats {
    pub new_cases: f64,
    pub new_deaths: f64,
}

impl DailyStats {
    pub fn get(&self, kind: TargetKind) -> f64 {
        match kind {
            TargetKind::Cases => self.new_cases,
            TargetKind::Deaths => self.new_deaths,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsTable {
    rows: BTreeMap<String, BTreeMap<NaiveDate, DailyStats>>,
}

impl StatsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, location: &str, date: NaiveDate, stats: DailyStats) -> Result<()> {
        for v in [stats.new_cases, stats.new_deaths] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Data(format!(
                    "{location} {date}: counts must be finite and non-negative, got {v}"
                )));
            }
        }
        let prev = self.rows.entry(location.to_string()).or_default().insert(date, stats);
        if prev.is_some() {
            return Err(Error::Data(format!("duplicate statistics row for {location} {date}")));
        }
        Ok(())
    }

    pub fn get(&self, location: &str, date: NaiveDate) -> Option<&DailyStats> {
        self.rows.get(location)?.get(&date)
    }

    pub fn value(&self, location: &str, date: NaiveDate, kind: TargetKind) -> Option<f64> {
        self.get(location, date).map(|s| s.get(kind))
    }

    pub fn require(&self, location: &str, date: NaiveDate, kind: TargetKind) -> Result<f64> {
        self.value(location, date, kind)
            .ok_or_else(|| Error::Coverage(format!("no statistics for location `{location}` on {date}")))
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Chronological (date, value) pairs for one location.
    pub fn series(&self, location: &str, kind: TargetKind) -> Vec<(NaiveDate, f64)> {
        self.rows
            .get(location)
            .map(|m| m.iter().map(|(d, s)| (*d, s.get(kind))).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows ordered by date, then location.
    pub fn rows_by_date(&self) -> Vec<(NaiveDate, &str, DailyStats)> {
        let mut out: Vec<_> = self
            .rows
            .iter()
            .flat_map(|(l, m)| m.iter().map(move |(d, s)| (*d, l.as_str(), *s)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        out
    }
}

fn parse_count(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid count `{field}`"),
    })
}

/// Reads `date,location,new_cases,new_deaths` CSV.
pub fn read_stats<R: Read>(reader: R) -> Result<StatsTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(STATS_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", STATS_HEADER.join(",")),
        });
    }
    let mut table = StatsTable::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let stats = DailyStats {
            new_cases: parse_count(&rec[2], line)?,
            new_deaths: parse_count(&rec[3], line)?,
        };
        table.insert(rec[1].trim(), date, stats).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(table)
}

pub fn write_stats<W: Write>(w: W, table: &StatsTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(STATS_HEADER)?;
    for (date, loc, s) in table.rows_by_date() {
        wtr.write_record([
            date.format("%Y-%m-%d").to_string(),
            loc.to_string(),
            s.new_cases.to_string(),
            s.new_deaths.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
