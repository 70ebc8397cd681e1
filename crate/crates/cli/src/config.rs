//! Flat `key=value` run configuration.
//!
//! Resolution order: built-in defaults, then the `--config` file, then
//! command-line flags. Every key is known up front, so a typo is an error
//! naming the key rather than a silently ignored setting.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use sphereflow::sampler::SamplerConfig;
use sphereflow::TrainConfig;

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    RandomJoint,
    Smiley,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::RandomJoint => "random_joint",
            Kind::Smiley => "smiley",
        })
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random_joint" => Ok(Kind::RandomJoint),
            "smiley" => Ok(Kind::Smiley),
            _ => Err(format!("unknown kind {s:?}, expected random_joint or smiley")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub kind: Kind,
    /// Categories per position `K`.
    pub classes: usize,
    /// Sequence length `k`.
    pub length: usize,
    /// Rows written by make-data.
    pub n: usize,
    /// Samples drawn for every KL or TV evaluation.
    pub eval_samples: usize,
    pub kl_smoothing: f64,
    pub heatmap_resolution: usize,
    pub heatmap_bandwidth: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            kind: Kind::RandomJoint,
            classes: 4,
            length: 4,
            n: 100_000,
            eval_samples: 512_000,
            kl_smoothing: sphereflow::eval::DEFAULT_KL_SMOOTHING,
            heatmap_resolution: 32,
            heatmap_bandwidth: 0.03,
            out_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Applies one setting. The seed is shared by every consumer of randomness.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "kind" => {
                self.kind = value.parse().map_err(CliError::Usage)?;
                // The smiley target lives on a single 2-simplex.
                if self.kind == Kind::Smiley {
                    self.classes = 3;
                    self.length = 1;
                }
            }
            "classes" | "K" => self.classes = parse(key, value)?,
            "length" | "k" => self.length = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "kl_smoothing" => self.kl_smoothing = parse(key, value)?,
            "heatmap_resolution" => self.heatmap_resolution = parse(key, value)?,
            "heatmap_bandwidth" => self.heatmap_bandwidth = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => {
                let seed = parse(key, value)?;
                self.train.seed = seed;
                self.sampler.seed = seed;
            }
            _ => {
                let known = self.train.set(key, value).map_err(|e| CliError::Usage(e.to_string()))?
                    || self.sampler.set(key, value).map_err(|e| CliError::Usage(e.to_string()))?;
                if !known {
                    return Err(CliError::Usage(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Reads a config file: one `key=value` per line, `#` comments and blank lines ignored.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| CliError::Usage(format!("{}:{}: {}", path.display(), i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Every setting in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("kind", self.kind.to_string()),
            ("classes", self.classes.to_string()),
            ("length", self.length.to_string()),
            ("n", self.n.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("kl_smoothing", self.kl_smoothing.to_string()),
            ("heatmap_resolution", self.heatmap_resolution.to_string()),
            ("heatmap_bandwidth", self.heatmap_bandwidth.to_string()),
        ];
        out.extend(self.train.entries());
        out.extend(self.sampler.entries());
        out.push(("out_dir", self.out_dir.display().to_string()));
        out
    }

    /// Text accepted by [`RunConfig::load_file`].
    pub fn dump(&self) -> String {
        let mut s = format!("# sphereflow config format_version={FORMAT_VERSION}\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Short digest of every setting except the output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: sphereflow::Error| CliError::Usage(e.to_string());
        if self.classes < 2 {
            return Err(CliError::Usage(format!("K must be at least 2, got {}", self.classes)));
        }
        if self.length == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        if self.kind == Kind::Smiley && (self.classes != 3 || self.length != 1) {
            return Err(CliError::Usage("the smiley target needs K=3 and k=1".into()));
        }
        if self.eval_samples == 0 || !(self.kl_smoothing >= 0.0) {
            return Err(CliError::Usage("eval_samples must be positive and kl_smoothing non-negative".into()));
        }
        if self.heatmap_resolution == 0 || !(self.heatmap_bandwidth > 0.0) {
            return Err(CliError::Usage("heatmap resolution and bandwidth must be positive".into()));
        }
        self.train.validate().map_err(usage)?;
        self.sampler.validate().map_err(usage)
    }

    /// Header line written at the top of every output file.
    pub fn header(&self, command: &str) -> String {
        format!("sphereflow {command} format_version={FORMAT_VERSION} config={}", self.hash())
    }
}
