use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;
use epiwatch_core::checkpoint::{decode_checkpoint, save_checkpoint};
use epiwatch_core::dataset::{build_tasks, Dataset, SampleCache};
use epiwatch_core::eval::{
    baseline_records, curve_rows, metric_rows, read_predictions, write_curves, write_metrics, write_predictions,
    Baseline, PredictionRecord,
};
use epiwatch_core::fixture::tiny_gradient_check;
use epiwatch_core::forecast::{predict_at, train_task, walk_forward, TaskReport};
use epiwatch_core::graph::{read_snapshots, read_stats, write_snapshots, write_stats};
use epiwatch_core::risk::{discover_risk_factors, inference_dates, Denominator};
use epiwatch_core::synth::{generate, write_manifest, SynthSpec};
use epiwatch_core::ForecastConfig;

use crate::manifest::{Input, RunManifest};
use crate::{
    CliError, ConfigArgs, DataArgs, DenominatorArg, EvaluateArgs, GenSynthArgs, GradcheckArgs, PredictArgs, RiskArgs,
    TrainArgs,
};

pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const RISK_FILE: &str = "risk.csv";

const GRADIENT_TOLERANCE: f64 = 1e-4;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn load_data(args: &DataArgs) -> Result<(Dataset, Input, Input), CliError> {
    let snaps = Input::read("snapshots", &args.snapshots)?;
    let stats = Input::read("stats", &args.stats)?;
    let snapshots = read_snapshots(&snaps.bytes[..])?;
    let table = read_stats(&stats.bytes[..])?;
    Ok((Dataset::new(snapshots, table)?, snaps, stats))
}

/// Defaults, then the config file, then `--set` overrides. Not yet validated.
fn load_config(args: &ConfigArgs) -> Result<(ForecastConfig, Option<Input>), CliError> {
    let mut cfg = ForecastConfig::default();
    let input = args.config.as_deref().map(|p| Input::read("config", p)).transpose()?;
    if let Some(inp) = &input {
        cfg.apply_kv_str(inp.text()?)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok((cfg, input))
}

fn date_range(from: NaiveDate, to: NaiveDate) -> Result<Vec<NaiveDate>, CliError> {
    if from > to {
        return Err(CliError::Usage(format!("--from {from} is after --to {to}")));
    }
    Ok(from.iter_days().take_while(|d| *d <= to).collect())
}

fn traces_csv(reports: &[TaskReport]) -> String {
    let mut out = String::from("cutoff_date,horizon,epoch,train_loss,validation_mae\n");
    for r in reports {
        for e in &r.trace.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.cutoff.format("%Y-%m-%d"),
                r.horizon,
                e.epoch,
                e.train_loss,
                e.validation_mae
            ));
        }
    }
    out
}

pub fn gen_synth(a: GenSynthArgs) -> Result<(), CliError> {
    let mut spec = SynthSpec {
        seed: a.seed,
        ..SynthSpec::default()
    };
    if let Some(v) = a.locations {
        spec.locations = v;
    }
    if let Some(v) = a.drivers {
        spec.drivers = v;
    }
    if let Some(v) = a.lag {
        spec.lag = v;
    }
    if let Some(v) = a.effect {
        spec.effect = v;
    }
    let corpus = generate(&spec, a.days)?;
    RunManifest::new("gen-synth", a.seed)
        .config_entry("days", a.days)
        .config_entry("locations", spec.locations)
        .config_entry("drivers", spec.drivers)
        .config_entry("lag", spec.lag)
        .config_entry("effect", spec.effect)
        .outputs(&[SNAPSHOTS_FILE, STATS_FILE, TRUTH_FILE])
        .write(&a.out)?;
    write_snapshots(create(&a.out, SNAPSHOTS_FILE)?, &corpus.snapshots)?;
    write_stats(create(&a.out, STATS_FILE)?, &corpus.stats)?;
    write_manifest(create(&a.out, TRUTH_FILE)?, &corpus.manifest)?;
    println!(
        "generated {} days x {} locations, {} planted mentions",
        corpus.snapshots.len(),
        spec.locations,
        corpus.manifest.len()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let (ds, snaps, stats) = load_data(&a.data)?;
    let (mut cfg, cfg_input) = load_config(&a.config)?;
    cfg.horizon = a.horizon;
    cfg.target = a.target;
    cfg.seed = a.seed;
    cfg.validate()?;
    let cutoff = a.cutoff.unwrap_or_else(|| ds.last_date());
    let mut manifest = RunManifest::new("train", a.seed)
        .config_text(&cfg.to_kv_string())
        .config_entry("cutoff", cutoff)
        .input(&snaps)
        .input(&stats);
    if let Some(c) = &cfg_input {
        manifest = manifest.input(c);
    }
    manifest.outputs(&[CHECKPOINT_FILE, TRACE_FILE]).write(&a.out)?;

    let task = build_tasks(&ds, &[cutoff], &[a.horizon], &cfg)?.remove(0);
    let mut cache = SampleCache::new();
    let (model, trace) = train_task(&ds, &mut cache, &task, &cfg)?;
    save_checkpoint(create(&a.out, CHECKPOINT_FILE)?, &model)?;
    fs::write(a.out.join(TRACE_FILE), trace.to_csv())?;
    println!(
        "trained {} epochs on {} windows; best epoch {} with validation MAE {}",
        trace.epochs.len(),
        task.train_ends.len(),
        trace.best_epoch,
        trace.best_validation_mae
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let (ds, snaps, stats) = load_data(&a.data)?;
    let cutoffs = date_range(a.from, a.to)?;
    let mut horizons = a.horizon.clone();
    horizons.sort_unstable();
    horizons.dedup();

    if let Some(path) = &a.checkpoint {
        let ckpt = Input::read("checkpoint", path)?;
        let model = decode_checkpoint(&ckpt.bytes)?;
        if horizons != [model.config.horizon] {
            return Err(CliError::Usage(format!(
                "checkpoint was trained for horizon {}, requested {:?}",
                model.config.horizon, horizons
            )));
        }
        if model.config.target != a.target {
            return Err(CliError::Usage(format!(
                "checkpoint predicts {}, requested {}",
                model.config.target, a.target
            )));
        }
        if model.locations != ds.locations() {
            return Err(CliError::Data(
                "checkpoint locations differ from the snapshot locations".into(),
            ));
        }
        RunManifest::new("predict", a.seed)
            .config_text(&model.config.to_kv_string())
            .config_entry("from", a.from)
            .config_entry("to", a.to)
            .input(&snaps)
            .input(&stats)
            .input(&ckpt)
            .outputs(&[PREDICTIONS_FILE])
            .write(&a.out)?;
        let mut cache = SampleCache::new();
        let mut records = Vec::new();
        for &c in &cutoffs {
            records.extend(predict_at(&model, &ds, &mut cache, c)?);
        }
        write_predictions(create(&a.out, PREDICTIONS_FILE)?, &records)?;
        println!("wrote {} predictions", records.len());
        return Ok(());
    }

    let (mut cfg, cfg_input) = load_config(&a.config)?;
    cfg.horizon = horizons[0];
    cfg.target = a.target;
    cfg.seed = a.seed;
    cfg.validate()?;
    let mut manifest = RunManifest::new("predict", a.seed)
        .config_text(&cfg.to_kv_string())
        .config_entry(
            "horizons",
            horizons.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        )
        .config_entry("from", a.from)
        .config_entry("to", a.to)
        .input(&snaps)
        .input(&stats);
    if let Some(c) = &cfg_input {
        manifest = manifest.input(c);
    }
    manifest.outputs(&[PREDICTIONS_FILE, TRACE_FILE]).write(&a.out)?;
    let wf = walk_forward(&ds, &cfg, &cutoffs, &horizons)?;
    write_predictions(create(&a.out, PREDICTIONS_FILE)?, &wf.records)?;
    fs::write(a.out.join(TRACE_FILE), traces_csv(&wf.reports))?;
    println!(
        "wrote {} predictions from {} trained models",
        wf.records.len(),
        wf.reports.len()
    );
    Ok(())
}

fn baseline_sets(
    records: &[PredictionRecord],
    table: &epiwatch_core::graph::StatsTable,
) -> Result<Vec<(Baseline, Vec<PredictionRecord>)>, CliError> {
    let targets: BTreeSet<_> = records.iter().map(|r| r.target.to_string()).collect();
    if targets.len() > 1 {
        return Err(CliError::Data(
            "predictions mix target kinds; baselines need a single target".into(),
        ));
    }
    let mut groups: BTreeMap<usize, (BTreeSet<NaiveDate>, BTreeSet<String>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.horizon).or_default();
        g.0.insert(r.cutoff_date);
        g.1.insert(r.location.clone());
    }
    let Some(target) = records.first().map(|r| r.target) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for method in Baseline::ALL {
        let mut all = Vec::new();
        for (h, (cutoffs, locs)) in &groups {
            let cutoffs: Vec<_> = cutoffs.iter().copied().collect();
            let locs: Vec<_> = locs.iter().cloned().collect();
            all.extend(baseline_records(table, &locs, &cutoffs, *h, target, method)?);
        }
        out.push((method, all));
    }
    Ok(out)
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let preds = Input::read("predictions", &a.predictions)?;
    let stats = a.stats.as_deref().map(|p| Input::read("stats", p)).transpose()?;
    let records = read_predictions(&preds.bytes[..])?;
    if records.is_empty() {
        return Err(CliError::Data("predictions file has no records".into()));
    }
    let mut manifest = RunManifest::new("evaluate", 0).input(&preds);
    if let Some(s) = &stats {
        manifest = manifest.input(s);
    }
    manifest.outputs(&[METRICS_FILE, CURVES_FILE]).write(&a.out)?;

    let mut metrics = metric_rows(&records, "");
    if metrics.is_empty() {
        return Err(CliError::Data("no prediction has a known actual value".into()));
    }
    let mut curves = curve_rows(&records, "");
    if let Some(s) = &stats {
        let table = read_stats(&s.bytes[..])?;
        for (method, base) in baseline_sets(&records, &table)? {
            let prefix = format!("{}_", method.label());
            metrics.extend(metric_rows(&base, &prefix));
            curves.extend(curve_rows(&base, &prefix));
        }
    }
    write_metrics(create(&a.out, METRICS_FILE)?, &metrics)?;
    write_curves(create(&a.out, CURVES_FILE)?, &curves)?;
    for (h, m, v) in &metrics {
        println!("h={h} {m} {v}");
    }
    Ok(())
}

pub fn risk(a: RiskArgs) -> Result<(), CliError> {
    if a.k < 1 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let (ds, snaps, stats) = load_data(&a.data)?;
    let ckpt = Input::read("checkpoint", &a.checkpoint)?;
    let model = decode_checkpoint(&ckpt.bytes)?;
    if model.locations != ds.locations() {
        return Err(CliError::Data(
            "checkpoint locations differ from the snapshot locations".into(),
        ));
    }
    let denominator = match a.denominator {
        DenominatorArg::EdgeDates => Denominator::EdgeDates,
        DenominatorArg::AllDates => Denominator::AllDates,
    };
    let target = model.config.target;
    let dates: Vec<NaiveDate> = inference_dates(&ds, &model)
        .into_iter()
        .filter(|d| a.from.is_none_or(|f| *d >= f) && a.to.is_none_or(|t| *d <= t))
        .filter(|d| ds.locations().iter().all(|l| ds.stats().value(l, *d, target).is_some()))
        .collect();
    if dates.is_empty() {
        return Err(CliError::Data(
            "no dates with both an inference window and statistics".into(),
        ));
    }
    let mut manifest = RunManifest::new("risk", model.config.seed)
        .config_text(&model.config.to_kv_string())
        .config_entry("k", a.k)
        .config_entry("denominator", format!("{denominator:?}"))
        .input(&snaps)
        .input(&stats)
        .input(&ckpt);
    if let Some(t) = &a.entity_type {
        manifest = manifest.config_entry("entity_type", t);
    }
    manifest.outputs(&[RISK_FILE]).write(&a.out)?;

    let mut cache = SampleCache::new();
    let table = discover_risk_factors(&model, &ds, &mut cache, &dates, target, denominator)?;
    table.write_report(create(&a.out, RISK_FILE)?, a.k, a.entity_type.as_deref())?;
    let first = dates[0];
    let last = dates[dates.len() - 1];
    println!(
        "ranked entities for {} locations over {} candidate dates ({first}..{last}, horizon {})",
        table.locations().len(),
        dates.len(),
        model.config.horizon
    );
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let report = tiny_gradient_check(a.seed)?;
    let at = report
        .worst
        .as_ref()
        .map(|(name, i)| format!(" at {name}[{i}]"))
        .unwrap_or_default();
    println!(
        "max relative error {:.3e}{at} over {} coordinates",
        report.max_rel_error, report.coordinates_checked
    );
    if report.max_rel_error >= GRADIENT_TOLERANCE {
        return Err(CliError::Data(format!(
            "gradient check failed: {:.3e} >= {GRADIENT_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
