use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use chrono::Duration;
use epiwatch_core::dataset::Dataset;
use epiwatch_core::graph::{read_snapshots, read_stats, write_snapshots, write_stats};
use epiwatch_core::synth::{base_process, generate, location_ids, read_manifest, write_manifest, SynthSpec};
use epiwatch_core::TargetKind;

const DAYS: usize = 120;

fn files(spec: &SynthSpec) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let c = generate(spec, DAYS).unwrap();
    let (mut s, mut t, mut m) = (Vec::new(), Vec::new(), Vec::new());
    write_snapshots(&mut s, &c.snapshots).unwrap();
    write_stats(&mut t, &c.stats).unwrap();
    write_manifest(&mut m, &c.manifest).unwrap();
    (s, t, m)
}

#[test]
fn zero_effect_reproduces_the_base_process() {
    let spec = SynthSpec {
        effect: 0.0,
        seed: 4,
        ..SynthSpec::default()
    };
    let c = generate(&spec, DAYS).unwrap();
    assert!(!c.manifest.is_empty());
    let base = base_process(&spec, DAYS);
    let first = spec.start - Duration::days(spec.history_days as i64);
    for (l, loc) in location_ids(&spec).iter().enumerate() {
        let series = c.stats.series(loc, TargetKind::Cases);
        assert_eq!(series.len(), spec.history_days + DAYS);
        for (i, (date, v)) in series.iter().enumerate() {
            assert_eq!(*date, first + Duration::days(i as i64));
            assert_eq!(*v, base[l][i].round());
        }
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let spec = SynthSpec {
        seed: 9,
        ..SynthSpec::default()
    };
    assert_eq!(files(&spec), files(&spec));
    assert_ne!(
        files(&spec).1,
        files(&SynthSpec {
            seed: 10,
            ..spec.clone()
        })
        .1
    );
}

#[test]
fn files_parse_back_into_a_dataset() {
    let spec = SynthSpec {
        seed: 2,
        ..SynthSpec::default()
    };
    let c = generate(&spec, DAYS).unwrap();
    let (s, t, m) = files(&spec);
    let snapshots = read_snapshots(Cursor::new(s)).unwrap();
    assert_eq!(snapshots, c.snapshots);
    let stats = read_stats(Cursor::new(t)).unwrap();
    assert_eq!(stats.rows_by_date(), c.stats.rows_by_date());
    assert_eq!(read_manifest(Cursor::new(m)).unwrap(), c.manifest);
    let ds = Dataset::new(snapshots, stats).unwrap();
    assert_eq!(ds.len(), DAYS);
    for (_, _, s) in ds.stats().rows_by_date() {
        assert!(s.new_cases >= 0.0 && s.new_cases.fract() == 0.0);
    }
}

#[test]
fn manifest_is_reconstructible_from_mentions() {
    let spec = SynthSpec {
        seed: 5,
        ..SynthSpec::default()
    };
    let c = generate(&spec, DAYS).unwrap();
    let drivers: BTreeSet<String> = c.drivers().into_iter().collect();
    let mut rebuilt = Vec::new();
    for s in &c.snapshots {
        for m in s.location_mentions.iter().filter(|m| drivers.contains(&m.entity)) {
            let start = s.date + Duration::days(spec.lag as i64);
            let end = start + Duration::days(spec.effect_duration as i64 - 1);
            rebuilt.push((m.entity.clone(), m.location.clone(), s.date, start, end));
        }
    }
    rebuilt.sort();
    let listed: Vec<_> = c
        .manifest
        .iter()
        .map(|p| {
            (
                p.driver.clone(),
                p.location.clone(),
                p.mention_date,
                p.effect_start,
                p.effect_end,
            )
        })
        .collect();
    assert_eq!(rebuilt, listed);
}

#[test]
fn affected_days_have_higher_counts() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec {
            seed,
            effect: 0.5,
            lag: 10,
            ..SynthSpec::default()
        };
        let c = generate(&spec, 180).unwrap();
        let mut affected: BTreeSet<(String, chrono::NaiveDate)> = BTreeSet::new();
        for p in &c.manifest {
            let mut d = p.effect_start;
            while d <= p.effect_end {
                affected.insert((p.location.clone(), d));
                d += Duration::days(1);
            }
        }
        // matched control: same location, days outside any effect
        let mut by_loc: BTreeMap<String, (f64, usize, f64, usize)> = BTreeMap::new();
        for (date, loc, s) in c.stats.rows_by_date() {
            let e = by_loc.entry(loc.to_string()).or_default();
            if affected.contains(&(loc.to_string(), date)) {
                e.0 += s.new_cases;
                e.1 += 1;
            } else {
                e.2 += s.new_cases;
                e.3 += 1;
            }
        }
        let (mut hit, mut base) = (0.0, 0.0);
        for (a, na, u, nu) in by_loc.values() {
            if *na > 0 && *nu > 0 {
                hit += a / *na as f64;
                base += u / *nu as f64;
            }
        }
        ratios.push(hit / base);
    }
    for r in &ratios {
        assert!(*r >= 1.3, "affected/unaffected ratios {ratios:?}");
    }
}
