//! Checkpoint container.
//!
//! A checkpoint is a text block followed by raw little-endian `f64` arrays:
//!
//! ```text
//! # <header naming the producing command>
//! format_version=1
//! step=120
//! eval_kl=0.0132            (or "none")
//! config.<key>=<value>      (every TrainConfig entry)
//! model.<field>=<value>     (length, dim, hidden, depth, time_embed_dim, cond_dim, chart)
//! adam.t=120
//! rng.<purpose>=<seed hex>:<stream>:<word position>
//! tensor <name> <rows> <cols> <offset>
//! array <name> <count>      (params, adam_m, adam_v, in payload order)
//! end
//! <payload>
//! ```
//!
//! Floats in the text block use Rust's shortest round-trip formatting, so a
//! reloaded config compares equal to the saved one.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::config::TrainConfig;
use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::field::{FieldModel, ModelSpec};
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;

const RNG_NAMES: [&str; 4] = ["data_order", "prior", "time", "pairing"];

/// Complete training state at a step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: FieldModel,
    pub optimizer: AdamState,
    pub step: u64,
    /// Stream positions for data order, prior, time and pairing draws.
    pub rng: [RngState; 4],
    /// Evaluation KL at this step, when one was computed.
    pub eval_kl: Option<f64>,
}

fn hex32(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex32(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Format(format!("invalid rng seed {s:?}"));
    if s.len() != 64 || !s.is_ascii() {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

fn field<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))
}

fn parse_field<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = field(meta, key)?;
    v.parse().map_err(|_| Error::Format(format!("checkpoint field {key} has invalid value {v:?}")))
}

impl Checkpoint {
    /// Serialises to `out`; `header` becomes the first line, prefixed with `# `.
    pub fn write_to<W: Write>(&self, mut out: W, header: &str) -> Result<()> {
        let mut text = String::new();
        let header = header.trim_start_matches('#').trim();
        text.push_str(&format!("# {header}\n"));
        text.push_str(&format!("format_version={FORMAT_VERSION}\n"));
        text.push_str(&format!("step={}\n", self.step));
        match self.eval_kl {
            Some(kl) => text.push_str(&format!("eval_kl={kl}\n")),
            None => text.push_str("eval_kl=none\n"),
        }
        for (k, v) in self.config.entries() {
            text.push_str(&format!("config.{k}={v}\n"));
        }
        let spec = self.model.spec();
        for (k, v) in [
            ("length", spec.length.to_string()),
            ("dim", spec.dim.to_string()),
            ("hidden", spec.hidden.to_string()),
            ("depth", spec.depth.to_string()),
            ("time_embed_dim", spec.time_embed_dim.to_string()),
            ("cond_dim", spec.cond_dim.to_string()),
            ("chart", spec.chart.to_string()),
        ] {
            text.push_str(&format!("model.{k}={v}\n"));
        }
        text.push_str(&format!("adam.t={}\n", self.optimizer.t));
        for (name, s) in RNG_NAMES.iter().zip(&self.rng) {
            text.push_str(&format!("rng.{name}={}:{}:{}\n", hex32(&s.seed), s.stream, s.word_pos));
        }
        for (name, rows, cols, offset) in self.model.tensor_table() {
            text.push_str(&format!("tensor {name} {rows} {cols} {offset}\n"));
        }
        let arrays: [(&str, &[f64]); 3] =
            [("params", self.model.params()), ("adam_m", &self.optimizer.m), ("adam_v", &self.optimizer.v)];
        for (name, a) in arrays {
            text.push_str(&format!("array {name} {}\n", a.len()));
        }
        text.push_str("end\n");
        out.write_all(text.as_bytes())?;
        let mut payload = Vec::with_capacity(8 * arrays.iter().map(|(_, a)| a.len()).sum::<usize>());
        for (_, a) in arrays {
            for v in a {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self, header: &str) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, header).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path, header: &str) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file, header)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Header line (without the leading `# `) of a serialised checkpoint.
    pub fn header(bytes: &[u8]) -> Option<String> {
        let end = bytes.iter().position(|&b| b == b'\n')?;
        let line = std::str::from_utf8(&bytes[..end]).ok()?;
        line.strip_prefix("# ").map(str::to_string)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const MARK: &[u8] = b"\nend\n";
        let split = bytes
            .windows(MARK.len())
            .position(|w| w == MARK)
            .ok_or_else(|| Error::Format("checkpoint has no end of metadata".into()))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
        let payload = &bytes[split + MARK.len()..];

        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.starts_with('#') => {}
            _ => return Err(Error::Format("checkpoint does not start with a header line".into())),
        }
        let mut meta = BTreeMap::new();
        let mut arrays = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("array ") {
                let mut parts = rest.split_whitespace();
                let (name, count) = (parts.next(), parts.next().and_then(|c| c.parse::<usize>().ok()));
                match (name, count) {
                    (Some(n), Some(c)) => arrays.push((n.to_string(), c)),
                    _ => return Err(Error::Format(format!("bad array line {line:?}"))),
                }
            } else if line.starts_with("tensor ") {
                // The shape table is derived from the model spec; it is informational.
            } else if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            } else {
                return Err(Error::Format(format!("unrecognised checkpoint line {line:?}")));
            }
        }
        let version: u32 = parse_field(&meta, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint format version {version}")));
        }

        let mut config = TrainConfig::default();
        for (k, v) in &meta {
            if let Some(key) = k.strip_prefix("config.") {
                if !config.set(key, v).map_err(|e| Error::Format(e.to_string()))? {
                    return Err(Error::Format(format!("unknown config key {key} in checkpoint")));
                }
            }
        }
        let spec = ModelSpec {
            length: parse_field(&meta, "model.length")?,
            dim: parse_field(&meta, "model.dim")?,
            hidden: parse_field(&meta, "model.hidden")?,
            depth: parse_field(&meta, "model.depth")?,
            time_embed_dim: parse_field(&meta, "model.time_embed_dim")?,
            cond_dim: parse_field(&meta, "model.cond_dim")?,
            chart: field(&meta, "model.chart")?.parse().map_err(|e: Error| Error::Format(e.to_string()))?,
        };
        let mut rng = [RngState { seed: [0; 32], stream: 0, word_pos: 0 }; 4];
        for (slot, name) in rng.iter_mut().zip(RNG_NAMES) {
            let key = format!("rng.{name}");
            let v = field(&meta, &key)?;
            let parts: Vec<&str> = v.split(':').collect();
            let bad = || Error::Format(format!("invalid {key} value {v:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            *slot = RngState {
                seed: unhex32(parts[0])?,
                stream: parts[1].parse().map_err(|_| bad())?,
                word_pos: parts[2].parse().map_err(|_| bad())?,
            };
        }
        let eval_kl = match field(&meta, "eval_kl")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::Format(format!("invalid eval_kl {v:?}")))?),
        };

        let expected = ["params", "adam_m", "adam_v"];
        if arrays.len() != 3 || arrays.iter().zip(expected).any(|((n, _), e)| n != e) {
            return Err(Error::Format("checkpoint arrays must be params, adam_m, adam_v".into()));
        }
        let total: usize = arrays.iter().map(|(_, c)| c).sum();
        if payload.len() != 8 * total {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, expected {}",
                payload.len(),
                8 * total
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let params = take(arrays[0].1);
        let m = take(arrays[1].1);
        let v = take(arrays[2].1);
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Format("optimizer moments do not match the parameter count".into()));
        }
        let model = FieldModel::from_params(spec, params).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Checkpoint {
            config,
            model,
            optimizer: AdamState { m, v, t: parse_field(&meta, "adam.t")? },
            step: parse_field(&meta, "step")?,
            rng,
            eval_kl,
        })
    }
}
