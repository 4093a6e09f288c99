//! The full forecaster: graph attention, temporal encoder and prediction head.

use epiwatch_tensor::{dropout, BatchNorm, BatchStats, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ForecastConfig;
use crate::dataset::WindowSample;
use crate::dgnn::{dgnn_forward, AttentionRecord, DgnnLayer, DgnnOutput};
use crate::error::{Error, Result};
use crate::temporal::{clamp_non_negative, encode_sequence, mean_pool, BiGru, PredictHead};

pub const INIT_STREAM: u64 = 0;
pub const DROPOUT_STREAM: u64 = 1;
pub const SHUFFLE_STREAM: u64 = 2;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which batch-norm layer a set of batch statistics belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSlot {
    Dgnn(usize),
    Head,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `locations × 1`, in normalized units when scaling is on.
    pub prediction: Var,
    pub norm_stats: Vec<(NormSlot, BatchStats)>,
    /// Last propagation layer, absent when the graph is bypassed.
    pub attention: Option<DgnnOutput>,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ForecastConfig,
    pub locations: Vec<String>,
    pub store: ParamStore,
    /// `locations × d_e` embeddings for locations without a supplied one.
    pub location_table: ParamId,
    pub layers: Vec<DgnnLayer>,
    pub layer_norms: Vec<Option<BatchNorm>>,
    pub encoder: Option<BiGru>,
    pub head: PredictHead,
    /// Per-location divisor for statistics and targets.
    pub scales: Vec<f64>,
}

impl Forecaster {
    pub fn new(config: &ForecastConfig, locations: &[String], seed: u64) -> Result<Self> {
        config.validate()?;
        if locations.is_empty() {
            return Err(Error::Config("forecaster needs at least one location".into()));
        }
        let mut rng = seeded_stream(seed, INIT_STREAM);
        let mut store = ParamStore::new();
        let table = Tensor::matrix(
            locations.len(),
            config.d_e,
            (0..locations.len() * config.d_e)
                .map(|_| rng.gen_range(-0.01..0.01))
                .collect(),
        );
        let location_table = store.add("location.embedding", table);
        let mut layers = Vec::new();
        let mut layer_norms = Vec::new();
        let mut width = config.d_e + config.d_t;
        if !config.ablation.bypass_dgnn {
            for l in 0..config.dgnn_layers {
                layers.push(DgnnLayer::new(
                    &mut store,
                    &format!("dgnn{l}"),
                    width,
                    config.dgnn_hidden,
                    config.heads,
                    config.dgnn_activation,
                    config.leaky_slope,
                    &mut rng,
                )?);
                layer_norms.push(
                    config
                        .batch_norm
                        .then(|| BatchNorm::new(&mut store, &format!("dgnn{l}.norm"), config.dgnn_hidden)),
                );
                width = config.dgnn_hidden;
            }
        } else {
            width = config.d_t;
        }
        let encoder = (!config.ablation.mean_pool_instead_of_birnn)
            .then(|| BiGru::new(&mut store, width, config.rnn_hidden, config.combine, &mut rng));
        let head_in = encoder.as_ref().map_or(width, BiGru::output_width);
        let head_hidden = if config.ffn_hidden == 0 {
            head_in
        } else {
            config.ffn_hidden
        };
        let head = PredictHead::new(
            &mut store,
            head_in,
            head_hidden,
            config.ffn_activation,
            config.batch_norm,
            &mut rng,
        );
        Ok(Forecaster {
            config: config.clone(),
            locations: locations.to_vec(),
            store,
            location_table,
            layers,
            layer_norms,
            encoder,
            head,
            scales: vec![1.0; locations.len()],
        })
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    fn check_sample(&self, sample: &WindowSample) -> Result<()> {
        if sample.graph.locations() != self.locations.as_slice() {
            return Err(Error::Data("window locations differ from the model's locations".into()));
        }
        if sample.graph.window_len() != self.config.window {
            return Err(Error::Window(format!(
                "window has {} days, model expects {}",
                sample.graph.window_len(),
                self.config.window
            )));
        }
        if sample.features.d_e != self.config.d_e || sample.features.d_t != self.config.d_t {
            return Err(Error::Data("feature widths differ from the model configuration".into()));
        }
        if !self.config.ablation.bypass_dgnn && sample.plans.len() != self.layers.len() {
            return Err(Error::Config("window was prepared for a different layer count".into()));
        }
        Ok(())
    }

    fn scaled_features(&self, sample: &WindowSample) -> Tensor {
        let mut f = sample.features.clone();
        f.scale_history(&sample.graph, &self.scales);
        Tensor::matrix(f.rows(), f.width(), f.values)
    }

    /// Records one forward pass. Train mode draws dropout masks from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &WindowSample,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        self.check_sample(sample)?;
        let cfg = &self.config;
        let x = self.scaled_features(sample);
        let mut norm_stats = Vec::new();
        let mut attention = None;
        let steps: Vec<Var> = if cfg.ablation.bypass_dgnn {
            sample
                .day_rows
                .iter()
                .map(|rows| {
                    let data = rows.iter().flat_map(|&r| x.row_slice(r)[cfg.d_e..].to_vec()).collect();
                    tape.constant(Tensor::matrix(rows.len(), cfg.d_t, data))
                })
                .collect()
        } else {
            let mut h = tape.constant(x);
            if sample.needs_learned_embeddings() {
                let table = tape.param(store, self.location_table);
                let emb = tape.embed_rows(table, sample.learned_rows.clone())?;
                let pad = tape.constant(Tensor::zeros(sample.features.rows(), cfg.d_t));
                let emb = tape.concat_cols(&[emb, pad])?;
                h = tape.add(h, emb)?;
            }
            for (l, (layer, plan)) in self.layers.iter().zip(&sample.plans).enumerate() {
                let out = dgnn_forward(tape, store, layer, h, plan)?;
                h = out.embeddings;
                if let Some(bn) = &self.layer_norms[l] {
                    let (y, s) = bn.forward(tape, store, h, mode)?;
                    h = y;
                    if let Some(s) = s {
                        norm_stats.push((NormSlot::Dgnn(l), s));
                    }
                }
                h = dropout(tape, h, cfg.dropout, mode, rng)?;
                attention = Some(out);
            }
            sample
                .day_rows
                .iter()
                .map(|rows| tape.gather_rows(h, rows.clone()))
                .collect::<std::result::Result<_, _>>()?
        };
        let pooled = match &self.encoder {
            Some(gru) => encode_sequence(tape, store, gru, &steps)?.pooled,
            None => mean_pool(tape, &steps)?,
        };
        let (prediction, s) = self.head.forward(tape, store, pooled, mode, cfg.dropout, rng)?;
        if let Some(s) = s {
            norm_stats.push((NormSlot::Head, s));
        }
        Ok(Forward {
            prediction,
            norm_stats,
            attention,
        })
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_norms(&mut self, stats: &[(NormSlot, BatchStats)]) {
        for (slot, s) in stats {
            let bn = match slot {
                NormSlot::Dgnn(l) => self.layer_norms[*l].as_mut(),
                NormSlot::Head => self.head.norm.as_mut(),
            };
            if let Some(bn) = bn {
                bn.update(s);
            }
        }
    }

    /// Normalized targets for the loss.
    pub fn scale_targets(&self, raw: &[f64]) -> Tensor {
        Tensor::column(raw.iter().zip(&self.scales).map(|(y, s)| y / s).collect())
    }

    fn eval_forward(&self, sample: &WindowSample) -> Result<(Tape, Forward)> {
        let mut tape = Tape::new();
        // eval mode never draws from the generator
        let mut rng = seeded_stream(0, DROPOUT_STREAM);
        let fwd = self.forward(&mut tape, &self.store, sample, Mode::Eval, &mut rng)?;
        Ok((tape, fwd))
    }

    /// Raw-scale head outputs before clamping.
    pub fn predict_raw(&self, sample: &WindowSample) -> Result<Vec<f64>> {
        let (tape, fwd) = self.eval_forward(sample)?;
        let out = tape.value(fwd.prediction).data();
        let raw: Vec<f64> = out.iter().zip(&self.scales).map(|(y, s)| y * s).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(epiwatch_tensor::TensorError::NonFinite("prediction is not finite".into()).into());
        }
        Ok(raw)
    }

    /// Inference predictions, one per location, clamped at zero.
    pub fn predict(&self, sample: &WindowSample) -> Result<Vec<f64>> {
        Ok(clamp_non_negative(&self.predict_raw(sample)?))
    }

    /// Attention of the last propagation layer under inference mode.
    pub fn attention(&self, sample: &WindowSample) -> Result<AttentionRecord> {
        let (tape, fwd) = self.eval_forward(sample)?;
        let out = fwd
            .attention
            .ok_or_else(|| Error::Config("the graph layer is bypassed; no attention to report".into()))?;
        let plan = sample.plans.last().expect("plan per layer");
        Ok(AttentionRecord::capture(&tape, plan, &out, self.store.version()))
    }
}
