//! On-disk formats.
//!
//! Sequence files (datasets and samples) are CSV preceded by one header line:
//!
//! ```text
//! # sphereflow <command> format_version=1 config=<hash> kind=random_joint classes=4 length=4 ...
//! x0,x1,x2,x3[,s0_0,...]
//! 2,0,3,1[,0.12,...]
//! ```
//!
//! Columns `x<i>` hold category indices. Optional `s<i>_<c>` columns hold
//! final sphere coordinates; smiley datasets store simplex points in `p<c>`
//! columns instead of indices.
//!
//! The truth sidecar is a text block ending in `end`, then little-endian f64:
//!
//! ```text
//! # sphereflow make-data format_version=1 config=<hash>
//! kind=random_joint
//! shape=4 4 4 4
//! end
//! ```
//!
//! A smiley sidecar has `kind=smiley`, `bandwidth=<h>` and `shape=<m> 4`, one
//! `(p0, p1, p2, weight)` row per mixture component.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use sphereflow::eval::{JointTable, SmileyMixture, ToyDistribution};

use crate::config::Kind;
use crate::CliError;

fn input_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {msg}", path.display()))
}

pub fn truth_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".truth");
    PathBuf::from(s)
}

/// A parsed sequence file.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    /// `key=value` tokens from the header line.
    pub meta: BTreeMap<String, String>,
    pub length: usize,
    /// Row-major category indices; empty for continuous files.
    pub indices: Vec<u32>,
    /// Row-major `p<c>` or `s<i>_<c>` values; empty when absent.
    pub coords: Vec<f64>,
    pub coord_width: usize,
    pub rows: usize,
}

impl SequenceFile {
    pub fn meta_usize(&self, key: &str, path: &Path) -> Result<usize, CliError> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| input_err(path, format!("header lacks a valid {key}")))
    }
}

/// Writes a sequence file. `coords` has `coord_width` values per row.
pub fn write_sequences(
    path: &Path,
    header: &str,
    length: usize,
    indices: &[u32],
    coord_prefix: &str,
    coord_width: usize,
    coords: &[f64],
) -> Result<(), CliError> {
    let rows = if length > 0 { indices.len() / length } else { coords.len() / coord_width.max(1) };
    let mut out = String::with_capacity(rows * (2 * length + 20 * coord_width + 1) + 256);
    let _ = writeln!(out, "# {header}");
    let mut cols: Vec<String> = (0..length).map(|i| format!("x{i}")).collect();
    if coord_width > 0 {
        if coord_prefix == "p" {
            cols.extend((0..coord_width).map(|c| format!("p{c}")));
        } else {
            let per = coord_width / length.max(1);
            for i in 0..length {
                cols.extend((0..per).map(|c| format!("s{i}_{c}")));
            }
        }
    }
    let _ = writeln!(out, "{}", cols.join(","));
    for r in 0..rows {
        let mut first = true;
        for x in &indices[r * length..(r + 1) * length] {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{x}");
        }
        if coord_width > 0 {
            for v in &coords[r * coord_width..(r + 1) * coord_width] {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| input_err(path, format!("cannot create: {e}")))?;
    f.write_all(bytes).map_err(|e| input_err(path, format!("cannot write: {e}")))
}

/// `key=value` tokens after the command name of a header line.
pub fn parse_header(line: &str) -> Option<BTreeMap<String, String>> {
    let rest = line.strip_prefix("# sphereflow ")?;
    let mut words = rest.split_whitespace();
    let command = words.next()?;
    let mut meta: BTreeMap<String, String> =
        words.filter_map(|w| w.split_once('=')).map(|(k, v)| (k.to_string(), v.to_string())).collect();
    meta.insert("command".into(), command.into());
    Some(meta)
}

pub fn read_sequences(path: &Path) -> Result<SequenceFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, format!("cannot read: {e}")))?;
    let mut lines = text.lines().enumerate();
    let meta = lines
        .next()
        .and_then(|(_, l)| parse_header(l))
        .ok_or_else(|| input_err(path, "line 1: missing sphereflow header"))?;
    let (_, cols) = lines.next().ok_or_else(|| input_err(path, "line 2: missing column names"))?;
    let cols: Vec<&str> = cols.split(',').map(str::trim).collect();
    let length = cols.iter().take_while(|c| c.starts_with('x')).count();
    let coord_width = cols.len() - length;
    if cols[length..].iter().any(|c| !(c.starts_with('s') || c.starts_with('p'))) {
        return Err(input_err(path, "line 2: unrecognised column names"));
    }
    let mut indices = Vec::new();
    let mut coords = Vec::new();
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| input_err(path, format!("line {}: {what}", i + 1));
        if fields.len() != cols.len() {
            return Err(bad(&format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        for f in &fields[..length] {
            indices.push(f.trim().parse::<u32>().map_err(|_| bad(&format!("invalid index {f:?}")))?);
        }
        for f in &fields[length..] {
            let v: f64 = f.trim().parse().map_err(|_| bad(&format!("invalid number {f:?}")))?;
            if !v.is_finite() {
                return Err(bad("non-finite coordinate"));
            }
            coords.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(input_err(path, "no data rows"));
    }
    Ok(SequenceFile { meta, length, indices, coords, coord_width, rows })
}

/// Writes the truth sidecar for `dist`.
pub fn write_truth(path: &Path, header: &str, dist: &ToyDistribution) -> Result<(), CliError> {
    let mut text = format!("# {header}\n");
    let payload: Vec<f64> = match dist {
        ToyDistribution::RandomJoint(t) => {
            let shape = vec![t.classes().to_string(); t.length()].join(" ");
            let _ = write!(text, "kind=random_joint\nshape={shape}\n");
            t.probs().to_vec()
        }
        ToyDistribution::Smiley(m) => {
            let _ = write!(text, "kind=smiley\nbandwidth={}\nshape={} 4\n", m.bandwidth, m.components.len());
            m.components.iter().flat_map(|(p, w)| [p[0], p[1], p[2], *w]).collect()
        }
    };
    text.push_str("end\n");
    let mut bytes = text.into_bytes();
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_truth(path: &Path) -> Result<ToyDistribution, CliError> {
    let bytes = std::fs::read(path).map_err(|e| input_err(path, format!("cannot read: {e}")))?;
    const MARK: &[u8] = b"\nend\n";
    let split = bytes
        .windows(MARK.len())
        .position(|w| w == MARK)
        .ok_or_else(|| input_err(path, "no end of header"))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| input_err(path, "header is not UTF-8"))?;
    let payload = &bytes[split + MARK.len()..];
    let meta: BTreeMap<&str, &str> = text.lines().skip(1).filter_map(|l| l.split_once('=')).collect();
    let shape: Vec<usize> = meta
        .get("shape")
        .ok_or_else(|| input_err(path, "missing shape"))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| input_err(path, "invalid shape")))
        .collect::<Result<_, _>>()?;
    let count: usize = shape.iter().product();
    if payload.len() != 8 * count {
        return Err(input_err(path, format!("payload has {} bytes, shape needs {}", payload.len(), 8 * count)));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let kind: Kind = meta.get("kind").copied().unwrap_or("").parse().map_err(|e: String| input_err(path, e))?;
    match kind {
        Kind::RandomJoint => {
            let classes = *shape.first().ok_or_else(|| input_err(path, "empty shape"))?;
            if shape.iter().any(|&s| s != classes) {
                return Err(input_err(path, "random_joint shape must repeat one class count"));
            }
            JointTable::new(classes, shape.len(), values)
                .map(ToyDistribution::RandomJoint)
                .map_err(|e| input_err(path, e))
        }
        Kind::Smiley => {
            if shape.len() != 2 || shape[1] != 4 {
                return Err(input_err(path, "smiley shape must be <m> 4"));
            }
            let bandwidth: f64 = meta
                .get("bandwidth")
                .and_then(|b| b.parse().ok())
                .ok_or_else(|| input_err(path, "missing bandwidth"))?;
            let components = values.chunks(4).map(|c| ([c[0], c[1], c[2]], c[3])).collect();
            Ok(ToyDistribution::Smiley(SmileyMixture { components, bandwidth }))
        }
    }
}
