//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line;
//! run with `--nocapture` to see them.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::rc::Rc;
use std::time::{Duration as Elapsed, Instant};

use chrono::Duration;
use common::{
    labeled_edges, node_label, random_points, random_records, random_snapshots, reference_dbscan, reference_mae,
    reference_smape, reference_window,
};
use epiwatch_core::dataset::{build_tasks, training_ends, Dataset, SampleCache};
use epiwatch_core::dgnn::{dgnn_forward, DgnnLayer, NeighborPlan};
use epiwatch_core::eval::{baseline_records, mae, smape, smoothed_curve, Baseline, MetricKind};
use epiwatch_core::fixture::{tiny_dataset, tiny_gradient_check, TINY_SEED};
use epiwatch_core::forecast::{train_task, walk_forward};
use epiwatch_core::graph::{aggregate_window, dbscan, GraphOptions};
use epiwatch_core::model::Forecaster;
use epiwatch_core::risk::{discover_risk_factors, inference_dates, Denominator};
use epiwatch_core::synth::{generate, SynthCorpus, SynthSpec};
use epiwatch_core::temporal::{encode_sequence, BiGru};
use epiwatch_core::train::{mean_loss, train, Example};
use epiwatch_core::{Combine, ForecastConfig};
use epiwatch_tensor::{Activation, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYNTH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SYNTH_DAYS: usize = 180;

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn corpus(seed: u64) -> (SynthCorpus, Dataset) {
    let corpus = generate(
        &SynthSpec {
            seed,
            ..SynthSpec::default()
        },
        SYNTH_DAYS,
    )
    .unwrap();
    let ds = Dataset::new(corpus.snapshots.clone(), corpus.stats.clone()).unwrap();
    (corpus, ds)
}

fn synth_config(seed: u64, horizon: usize) -> ForecastConfig {
    ForecastConfig {
        d_e: 16,
        d_t: 7,
        window: 7,
        heads: 4,
        dgnn_hidden: 16,
        rnn_hidden: 16,
        horizon,
        normalize: true,
        dropout: 0.1,
        max_epochs: 20,
        patience: 5,
        learning_rate: 0.01,
        batch_norm: false,
        retrain_every: 30,
        dbscan_eps: 0.1,
        seed,
        ..ForecastConfig::default()
    }
}

/// Model MAE and persistence MAE over the last 30 cutoffs whose targets are observed.
fn walk_forward_mae(ds: &Dataset, cfg: &ForecastConfig) -> (f64, f64) {
    let h = cfg.horizon;
    let last = ds.last_date() - Duration::days(h as i64);
    let cutoffs: Vec<_> = (0..30).map(|i| last - Duration::days(29 - i)).collect();
    let wf = walk_forward(ds, cfg, &cutoffs, &[h]).unwrap();
    let base = baseline_records(
        ds.stats(),
        ds.locations(),
        &cutoffs,
        h,
        cfg.target,
        Baseline::Persistence,
    )
    .unwrap();
    (mae(&wf.records).unwrap(), mae(&base).unwrap())
}

#[test]
fn gradient_fidelity() {
    let t = Instant::now();
    let report = tiny_gradient_check(TINY_SEED).unwrap();
    let elapsed = t.elapsed();
    verdict(
        "gradient fidelity",
        report.max_rel_error < 1e-4 && elapsed < Elapsed::from_secs(30),
        format!(
            "max relative error {:.2e} over {} coordinates in {elapsed:.1?}",
            report.max_rel_error, report.coordinates_checked
        ),
    );
}

#[test]
fn attention_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let days = rng.gen_range(1..=4);
        let locations = rng.gen_range(1..=4);
        let entities = rng.gen_range(0..=12);
        let g = aggregate_window(
            &random_snapshots(&mut rng, days, locations, entities, 3),
            &GraphOptions::default(),
        )
        .unwrap();
        let mut store = ParamStore::new();
        let heads = rng.gen_range(1..=3);
        let layer = DgnnLayer::new(&mut store, "g", 5, 4, heads, Activation::Elu, 0.2, &mut rng).unwrap();
        for h in &layer.heads {
            let v = store.value(h.score).map(|x| 20.0 * x);
            store.get_mut(h.score).value = v;
        }
        let gru = BiGru::new(&mut store, 4, 3, Combine::Concat, &mut rng);
        let plan = NeighborPlan::new(&g, g.num_nodes()).unwrap();
        let n = g.num_nodes();
        let x = Tensor::matrix(n, 5, (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = dgnn_forward(&mut tape, &store, &layer, xv, &plan).unwrap();
        for alpha in &out.alphas {
            let a = tape.value(*alpha).data();
            for node in 0..plan.num_targets {
                worst = worst.max((a[plan.segment(node)].iter().sum::<f64>() - 1.0).abs());
            }
        }
        let steps: Vec<Var> = (0..g.window_len())
            .map(|d| {
                let rows: Rc<[usize]> = (0..g.num_locations()).map(|l| g.copy_index(l, d)).collect();
                tape.gather_rows(out.embeddings, rows).unwrap()
            })
            .collect();
        let enc = encode_sequence(&mut tape, &store, &gru, &steps).unwrap();
        let beta = tape.value(enc.beta);
        for r in 0..beta.rows() {
            worst = worst.max((beta.row_slice(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    verdict(
        "attention normalization",
        worst < 1e-9,
        format!("largest |sum - 1| = {worst:.1e} over 20 graphs"),
    );
}

#[test]
fn aggregation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut mismatches = Vec::new();
    for case in 0..50 {
        let days = rng.gen_range(1..=10);
        let locations = rng.gen_range(1..=5);
        let entities = rng.gen_range(0..=50);
        let snaps = random_snapshots(&mut rng, days, locations, entities, 3);
        let threshold = if rng.gen::<bool>() { 0.0 } else { 1.5 };
        let g = aggregate_window(
            &snaps,
            &GraphOptions {
                mobility_threshold: threshold,
                ..GraphOptions::default()
            },
        )
        .unwrap();
        let (nodes, edges) = reference_window(&snaps, threshold);
        let got_nodes: BTreeSet<_> = (0..g.num_nodes()).map(|i| node_label(&g, i)).collect();
        if g.num_nodes() != nodes.len()
            || got_nodes != nodes
            || g.edges().len() != edges.len()
            || labeled_edges(&g) != edges
        {
            mismatches.push(case);
        }
    }
    verdict(
        "aggregation oracle",
        mismatches.is_empty(),
        format!(
            "{} of 50 fixtures differ from the set-union reference {mismatches:?}",
            mismatches.len()
        ),
    );
}

#[test]
fn dbscan_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut mismatches = Vec::new();
    for case in 0..20 {
        let n = rng.gen_range(1..=50);
        let dim = rng.gen_range(1..=3);
        let points = random_points(&mut rng, n, dim);
        let eps = rng.gen_range(0.1..0.8);
        let min_pts = rng.gen_range(1..=5);
        if dbscan(&points, eps, min_pts).unwrap() != reference_dbscan(&points, eps, min_pts) {
            mismatches.push(case);
        }
    }
    verdict(
        "dbscan equivalence",
        mismatches.is_empty(),
        format!(
            "{} of 20 point sets differ from the quadratic reference {mismatches:?}",
            mismatches.len()
        ),
    );
}

#[test]
fn metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut records = random_records(&mut rng, 200);
    records.sort_by_key(|r| r.cutoff_date);
    let (m, s) = (mae(&records).unwrap(), smape(&records).unwrap());
    let curve_ok = [MetricKind::Mae, MetricKind::Smape]
        .into_iter()
        .all(|k| smoothed_curve(&records, k).last().map(|p| p.1) == Some(k.compute(&records).unwrap()));
    verdict(
        "metric oracles",
        m == reference_mae(&records) && s == reference_smape(&records) && (0.0..=1.0).contains(&s) && curve_ok,
        format!("MAE {m}, sMAPE {s}, curve end matches aggregate: {curve_ok}"),
    );
}

#[test]
fn overfit_capacity() {
    let cfg = ForecastConfig {
        d_e: 4,
        d_t: 7,
        window: 7,
        dgnn_hidden: 16,
        rnn_hidden: 16,
        horizon: 1,
        dropout: 0.0,
        max_epochs: 300,
        patience: 300,
        validation_size: 1,
        ..ForecastConfig::default()
    };
    let t = Instant::now();
    let ds = tiny_dataset(0, 20, &cfg).unwrap();
    let cutoff = ds.last_date();
    let mut cache = SampleCache::new();
    let examples: Vec<Example> = training_ends(&ds, cutoff, &cfg)
        .into_iter()
        .map(|e| Example {
            sample: cache.get(&ds, e, &cfg).unwrap(),
            targets: ds.targets(ds.date(e) + Duration::days(1), &cfg).unwrap(),
        })
        .collect();
    let mut model = Forecaster::new(&cfg, ds.locations(), cfg.seed).unwrap();
    let before = mean_loss(&model, &examples).unwrap();
    let trace = train(&mut model, &examples, &examples, cfg.seed).unwrap();
    let after = mean_loss(&model, &examples).unwrap();
    let elapsed = t.elapsed();
    let ratio = after / before;
    verdict(
        "overfit capacity",
        ratio < 0.01 && trace.epochs.len() <= 300 && elapsed < Elapsed::from_secs(120),
        format!(
            "training MSE {before:.3} -> {after:.4} (ratio {ratio:.5}) in {} epochs, {elapsed:.1?}",
            trace.epochs.len()
        ),
    );
}

#[test]
fn synthetic_forecasting() {
    let t = Instant::now();
    let ratios: Vec<f64> = SYNTH_SEEDS
        .iter()
        .map(|&seed| {
            let (_, ds) = corpus(seed);
            let (model, persistence) = walk_forward_mae(&ds, &synth_config(seed, 14));
            model / persistence
        })
        .collect();
    let elapsed = t.elapsed();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    verdict(
        "synthetic forecasting",
        mean <= 0.9 && elapsed < Elapsed::from_secs(600),
        format!("14-day MAE / persistence MAE = {mean:.3} (per seed {ratios:.3?}) in {elapsed:.1?}"),
    );
}

#[test]
fn risk_factor_recovery() {
    let h = 14;
    let precisions: Vec<f64> = SYNTH_SEEDS
        .iter()
        .map(|&seed| {
            let (corpus, ds) = corpus(seed);
            let cfg = ForecastConfig {
                dropout: 0.0,
                max_epochs: 100,
                patience: 100,
                learning_rate: 0.003,
                ..synth_config(seed, h)
            };
            let cutoff = ds.last_date() - Duration::days(h as i64);
            let mut cache = SampleCache::new();
            let task = build_tasks(&ds, &[cutoff], &[h], &cfg).unwrap().remove(0);
            let (model, _) = train_task(&ds, &mut cache, &task, &cfg).unwrap();
            let dates: Vec<_> = inference_dates(&ds, &model)
                .into_iter()
                .filter(|d| {
                    ds.locations()
                        .iter()
                        .all(|l| ds.stats().value(l, *d, cfg.target).is_some())
                })
                .collect();
            let table =
                discover_risk_factors(&model, &ds, &mut cache, &dates, cfg.target, Denominator::EdgeDates).unwrap();
            let pairs: BTreeSet<_> = corpus
                .manifest
                .iter()
                .filter(|p| {
                    table.high_sets[&p.location]
                        .iter()
                        .any(|d| *d >= p.effect_start && *d <= p.effect_end)
                })
                .map(|p| (p.driver.clone(), p.location.clone()))
                .collect();
            let hits = pairs
                .iter()
                .filter(|(d, l)| table.top_k(l, 5, None).unwrap().iter().any(|r| &r.entity == d))
                .count();
            hits as f64 / pairs.len().max(1) as f64
        })
        .collect();
    let mean = precisions.iter().sum::<f64>() / precisions.len() as f64;
    verdict(
        "risk-factor recovery",
        mean >= 0.6,
        format!("top-5 precision of planted drivers {mean:.3} (per seed {precisions:.3?})"),
    );
}

#[test]
fn ablation_direction() {
    let (mut full, mut ablated) = (0.0, 0.0);
    for &seed in &SYNTH_SEEDS {
        let (_, ds) = corpus(seed);
        let cfg = synth_config(seed, 7);
        full += walk_forward_mae(&ds, &cfg).0;
        let mut no_edges = cfg.clone();
        no_edges.ablation.drop_location_entity_edges = true;
        ablated += walk_forward_mae(&ds, &no_edges).0;
    }
    let n = SYNTH_SEEDS.len() as f64;
    let (full, ablated) = (full / n, ablated / n);
    verdict(
        "ablation direction",
        ablated > full,
        format!("7-day MAE {full:.2} with location-entity edges, {ablated:.2} without"),
    );
}

fn epiwatch(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_epiwatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(dir: &Path) {
    let data = ["--snapshots", "data/snapshots.jsonl", "--stats", "data/stats.csv"];
    let tune = [
        "--set",
        "d_e=16",
        "--set",
        "max_epochs=3",
        "--set",
        "patience=3",
        "--set",
        "window=5",
        "--set",
        "d_t=5",
        "--set",
        "validation_size=2",
    ];
    epiwatch(
        dir,
        &[
            "gen-synth",
            "--out",
            "data",
            "--seed",
            "3",
            "--days",
            "45",
            "--locations",
            "4",
        ],
    );
    let mut train = vec![
        "train",
        "--horizon",
        "3",
        "--target",
        "cases",
        "--seed",
        "5",
        "--out",
        "model",
    ];
    train.extend(data);
    train.extend(tune);
    epiwatch(dir, &train);
    let mut predict = vec![
        "predict",
        "--horizon",
        "3,7",
        "--target",
        "cases",
        "--seed",
        "5",
        "--out",
        "pred",
    ];
    predict.extend(["--from", "2020-06-10", "--to", "2020-06-14"]);
    predict.extend(data);
    predict.extend(tune);
    epiwatch(dir, &predict);
    epiwatch(
        dir,
        &[
            "evaluate",
            "--predictions",
            "pred/predictions.csv",
            "--stats",
            "data/stats.csv",
            "--out",
            "eval",
        ],
    );
    let mut risk = vec!["risk", "--checkpoint", "model/model.ckpt", "--out", "risk"];
    risk.extend(data);
    epiwatch(dir, &risk);
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn cli_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (fa, fb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    let differing: Vec<_> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.clone())
        .collect();
    verdict(
        "cli determinism",
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", fa.len()),
    );
}
