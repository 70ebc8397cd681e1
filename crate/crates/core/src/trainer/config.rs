use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Chart, DEFAULT_SMOOTHING, DEFAULT_TIME_CLAMP};
use crate::transport::{Regularization, SinkhornConfig};

use super::optim::AdamHyper;

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub ot_enabled: bool,
    pub chart: Chart,
    /// Label smoothing applied to one-hot data before mapping to the sphere.
    pub smoothing: f64,
    /// Times are drawn from `[0, 1 - time_clamp)`.
    pub time_clamp: f64,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_interval: u64,
    pub hidden: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub sinkhorn: SinkhornConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            ot_enabled: true,
            chart: Chart::Sphere,
            smoothing: DEFAULT_SMOOTHING,
            time_clamp: DEFAULT_TIME_CLAMP,
            seed: 0,
            eval_interval: 1000,
            hidden: 256,
            depth: 5,
            time_embed_dim: 64,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::arg(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::arg(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularization::Absolute(e) => write!(f, "{e}"),
            Regularization::MedianScaled(e) => write!(f, "{e}*median"),
        }
    }
}

impl FromStr for Regularization {
    type Err = Error;

    /// `0.01` is absolute; `0.05*median` scales the median cost.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::arg(format!("invalid entropic regulariser {s:?}"));
        match s.strip_suffix("*median") {
            Some(f) => Ok(Regularization::MedianScaled(f.trim().parse().map_err(|_| bad())?)),
            None => Ok(Regularization::Absolute(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta1 complement", 1.0 - self.beta1),
            ("beta2 complement", 1.0 - self.beta2),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be non-negative"));
        }
        if !(self.weight_decay >= 0.0) || !(self.beta1 >= 0.0) || !(self.beta2 >= 0.0) {
            return Err(Error::arg("weight_decay and betas must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::arg("smoothing must lie in (0, 1)"));
        }
        if !(self.time_clamp > 0.0 && self.time_clamp < 1.0) {
            return Err(Error::arg("time_clamp must lie in (0, 1)"));
        }
        if self.hidden == 0 {
            return Err(Error::arg("hidden must be positive"));
        }
        self.sinkhorn.validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// All fields as `key=value` pairs, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("ot", self.ot_enabled.to_string()),
            ("chart", self.chart.to_string()),
            ("smoothing", self.smoothing.to_string()),
            ("time_clamp", self.time_clamp.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("hidden", self.hidden.to_string()),
            ("depth", self.depth.to_string()),
            ("time_embed_dim", self.time_embed_dim.to_string()),
            ("sinkhorn_epsilon", self.sinkhorn.epsilon.to_string()),
            ("sinkhorn_max_iters", self.sinkhorn.max_iters.to_string()),
            ("sinkhorn_tolerance", self.sinkhorn.tolerance.to_string()),
        ]
    }

    /// Sets one field by key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "ot" => self.ot_enabled = parse_bool(key, value)?,
            "chart" => self.chart = value.trim().parse()?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "time_clamp" => self.time_clamp = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "time_embed_dim" => self.time_embed_dim = parse(key, value)?,
            "sinkhorn_epsilon" => self.sinkhorn.epsilon = value.parse()?,
            "sinkhorn_max_iters" => self.sinkhorn.max_iters = parse(key, value)?,
            "sinkhorn_tolerance" => self.sinkhorn.tolerance = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
