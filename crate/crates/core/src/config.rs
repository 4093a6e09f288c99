//! Forecast configuration and its key-value text form.
//!
//! The text form is one `key = value` pair per line; `#` starts a comment.
//! Unknown keys are rejected. [`ForecastConfig::to_kv_string`] emits every
//! field in a fixed order so the text round-trips exactly.

use std::fmt;
use std::str::FromStr;

use epiwatch_tensor::Activation;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    Cases,
    Deaths,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Cases => "cases",
            TargetKind::Deaths => "deaths",
        })
    }
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cases" => Ok(TargetKind::Cases),
            "deaths" => Ok(TargetKind::Deaths),
            other => Err(Error::Config(format!(
                "unknown target `{other}` (expected cases|deaths)"
            ))),
        }
    }
}

/// How the two recurrent directions are combined per time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Concat,
    Sum,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Concat => "concat",
            Combine::Sum => "sum",
        })
    }
}

impl FromStr for Combine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "concat" => Ok(Combine::Concat),
            "sum" => Ok(Combine::Sum),
            other => Err(Error::Config(format!(
                "unknown combine `{other}` (expected concat|sum)"
            ))),
        }
    }
}

/// Switches that remove parts of the model or graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub drop_entity_entity_edges: bool,
    pub drop_location_entity_edges: bool,
    pub mean_pool_instead_of_birnn: bool,
    pub bypass_dgnn: bool,
    pub self_loops: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            drop_entity_entity_edges: false,
            drop_location_entity_edges: false,
            mean_pool_instead_of_birnn: false,
            bypass_dgnn: false,
            self_loops: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub target: TargetKind,
    pub window: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub heads: usize,
    pub dgnn_hidden: usize,
    pub dgnn_layers: usize,
    pub rnn_hidden: usize,
    /// 0 means "same as the combined recurrent width".
    pub ffn_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub normalize: bool,
    pub ablation: Ablation,
    pub combine: Combine,
    pub dgnn_activation: Activation,
    pub ffn_activation: Activation,
    pub leaky_slope: f64,
    pub mobility_threshold: f64,
    pub merge_entities: bool,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub retrain_every: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 7,
            target: TargetKind::Cases,
            window: 7,
            d_e: 768,
            d_t: 7,
            heads: 4,
            dgnn_hidden: 64,
            dgnn_layers: 1,
            rnn_hidden: 64,
            ffn_hidden: 0,
            learning_rate: 0.001,
            batch_size: 4,
            dropout: 0.5,
            batch_norm: true,
            max_epochs: 300,
            patience: 100,
            validation_size: 5,
            grad_clip: 5.0,
            seed: 0,
            normalize: false,
            ablation: Ablation::default(),
            combine: Combine::Concat,
            dgnn_activation: Activation::Elu,
            ffn_activation: Activation::Relu,
            leaky_slope: epiwatch_tensor::ops::DEFAULT_LEAKY_SLOPE,
            mobility_threshold: 0.0,
            merge_entities: true,
            dbscan_eps: 0.1,
            dbscan_min_pts: 1,
            retrain_every: 1,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl ForecastConfig {
    /// Width of the recurrent output per time step after combining directions.
    pub fn combined_width(&self) -> usize {
        match self.combine {
            Combine::Concat => 2 * self.rnn_hidden,
            Combine::Sum => self.rnn_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon < 1 {
            return fail("horizon must be at least 1");
        }
        if self.window < 1 {
            return fail("window must be at least 1");
        }
        if self.d_e < 1 || self.d_t < 1 {
            return fail("feature dimensions d_e and d_t must be positive");
        }
        if self.heads < 1 || self.dgnn_layers < 1 {
            return fail("heads and dgnn_layers must be at least 1");
        }
        if self.dgnn_hidden < 1 || self.rnn_hidden < 1 {
            return fail("hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.patience > self.max_epochs {
            return fail("patience must not exceed max_epochs");
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1");
        }
        if self.validation_size < 1 {
            return fail("validation_size must be at least 1");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail("leaky_slope must lie in (0, 1)");
        }
        if !(self.mobility_threshold >= 0.0) {
            return fail("mobility_threshold must be non-negative");
        }
        if !(self.dbscan_eps > 0.0) || self.dbscan_min_pts < 1 {
            return fail("dbscan_eps must be positive and dbscan_min_pts at least 1");
        }
        if self.retrain_every < 1 {
            return fail("retrain_every must be at least 1");
        }
        Ok(())
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "horizon" => self.horizon = parse_num(key, v)?,
            "target" => self.target = v.parse()?,
            "window" => self.window = parse_num(key, v)?,
            "d_e" => self.d_e = parse_num(key, v)?,
            "d_t" => self.d_t = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "dgnn_hidden" => self.dgnn_hidden = parse_num(key, v)?,
            "dgnn_layers" => self.dgnn_layers = parse_num(key, v)?,
            "rnn_hidden" => self.rnn_hidden = parse_num(key, v)?,
            "ffn_hidden" => self.ffn_hidden = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "batch_norm" => self.batch_norm = parse_bool(key, v)?,
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "validation_size" => self.validation_size = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "normalize" => self.normalize = parse_bool(key, v)?,
            "drop_entity_entity_edges" => self.ablation.drop_entity_entity_edges = parse_bool(key, v)?,
            "drop_location_entity_edges" => self.ablation.drop_location_entity_edges = parse_bool(key, v)?,
            "mean_pool_instead_of_birnn" => self.ablation.mean_pool_instead_of_birnn = parse_bool(key, v)?,
            "bypass_dgnn" => self.ablation.bypass_dgnn = parse_bool(key, v)?,
            "self_loops" => self.ablation.self_loops = parse_bool(key, v)?,
            "combine" => self.combine = v.parse()?,
            "dgnn_activation" => self.dgnn_activation = v.parse()?,
            "ffn_activation" => self.ffn_activation = v.parse()?,
            "leaky_slope" => self.leaky_slope = parse_num(key, v)?,
            "mobility_threshold" => self.mobility_threshold = parse_num(key, v)?,
            "merge_entities" => self.merge_entities = parse_bool(key, v)?,
            "dbscan_eps" => self.dbscan_eps = parse_num(key, v)?,
            "dbscan_min_pts" => self.dbscan_min_pts = parse_num(key, v)?,
            "retrain_every" => self.retrain_every = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses key-value text on top of the defaults and validates the result.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies key-value text on top of `self` without validating.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        let a = &self.ablation;
        let pairs: Vec<(&str, String)> = vec![
            ("horizon", self.horizon.to_string()),
            ("target", self.target.to_string()),
            ("window", self.window.to_string()),
            ("d_e", self.d_e.to_string()),
            ("d_t", self.d_t.to_string()),
            ("heads", self.heads.to_string()),
            ("dgnn_hidden", self.dgnn_hidden.to_string()),
            ("dgnn_layers", self.dgnn_layers.to_string()),
            ("rnn_hidden", self.rnn_hidden.to_string()),
            ("ffn_hidden", self.ffn_hidden.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("batch_norm", self.batch_norm.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("validation_size", self.validation_size.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("seed", self.seed.to_string()),
            ("normalize", self.normalize.to_string()),
            ("drop_entity_entity_edges", a.drop_entity_entity_edges.to_string()),
            ("drop_location_entity_edges", a.drop_location_entity_edges.to_string()),
            ("mean_pool_instead_of_birnn", a.mean_pool_instead_of_birnn.to_string()),
            ("bypass_dgnn", a.bypass_dgnn.to_string()),
            ("self_loops", a.self_loops.to_string()),
            ("combine", self.combine.to_string()),
            ("dgnn_activation", self.dgnn_activation.to_string()),
            ("ffn_activation", self.ffn_activation.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("mobility_threshold", self.mobility_threshold.to_string()),
            ("merge_entities", self.merge_entities.to_string()),
            ("dbscan_eps", self.dbscan_eps.to_string()),
            ("dbscan_min_pts", self.dbscan_min_pts.to_string()),
            ("retrain_every", self.retrain_every.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
