//! Generation: integrate the learned field from the prior at `t = 0` to
//! `t = 1` on the product sphere orthant, then decode each position.
//!
//! Two integrators are available. `VelocityEuler` takes geodesic Euler steps
//! `x <- exp_x(h v(t, x))`. `EndpointGeodesic` first predicts the endpoint
//! `x1_hat = exp_x((1 - t) v(t, x))` and then moves along the geodesic towards
//! it by the fraction `alpha'(t) dt / (1 - alpha(t))`.
//!
//! Samples are processed in fixed-size chunks, each with its own random
//! streams, so results do not depend on the number of threads.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::geometry::{fill_uniform_prior, raw, Chart, ProductPoint, SpherePoint};
use crate::rng::{chunk_stream, Purpose};
use crate::trainer::{parse, Evaluator};

/// Samples integrated together; also the unit of random stream assignment.
pub const CHUNK_SIZE: usize = 256;

/// `alpha(t)` at or above this is treated as the end of the endpoint scheme.
const TERMINAL_ALPHA: f64 = 1.0 - 1e-9;

/// Step size of the central difference used for schedules without a derivative.
const SCHEDULE_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    VelocityEuler,
    EndpointGeodesic,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::VelocityEuler => "velocity_euler",
            Scheme::EndpointGeodesic => "endpoint_geodesic",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "velocity_euler" | "velocity" | "euler" => Ok(Scheme::VelocityEuler),
            "endpoint_geodesic" | "endpoint" => Ok(Scheme::EndpointGeodesic),
            other => Err(Error::arg(format!("unknown scheme '{other}' (expected velocity_euler or endpoint_geodesic)"))),
        }
    }
}

/// Monotone time reparametrisation `alpha: [0, 1] -> [0, 1]` for the endpoint scheme.
#[derive(Clone)]
pub enum Schedule {
    Identity,
    /// `alpha(t) = t^gamma` with `gamma > 0`.
    Power(f64),
    /// Any monotone map with fixed endpoints; its derivative is taken numerically.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Identity => f.write_str("Identity"),
            Schedule::Power(g) => write!(f, "Power({g})"),
            Schedule::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl PartialEq for Schedule {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Schedule::Identity, Schedule::Identity) => true,
            (Schedule::Power(a), Schedule::Power(b)) => a == b,
            (Schedule::Custom(a), Schedule::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Schedule {
    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            Schedule::Identity => t,
            Schedule::Power(g) => t.powf(*g),
            Schedule::Custom(f) => f(t),
        }
    }

    /// `alpha'(t)`, in closed form where known and by central difference otherwise.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Schedule::Identity => 1.0,
            Schedule::Power(g) => g * t.powf(g - 1.0),
            Schedule::Custom(f) => {
                let lo = (t - SCHEDULE_FD_STEP).max(0.0);
                let hi = (t + SCHEDULE_FD_STEP).min(1.0);
                (f(hi) - f(lo)) / (hi - lo)
            }
        }
    }

    /// Checks fixed endpoints and monotonicity on a grid of `samples` points.
    pub fn validate(&self, samples: usize) -> Result<()> {
        if let Schedule::Power(g) = self {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::arg(format!("power schedule exponent must be positive, got {g}")));
            }
        }
        if self.alpha(0.0).abs() > 1e-12 || (self.alpha(1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::arg("schedule must satisfy alpha(0) = 0 and alpha(1) = 1"));
        }
        let n = samples.max(2);
        let mut prev = self.alpha(0.0);
        for i in 1..=n {
            let a = self.alpha(i as f64 / n as f64);
            if !(a >= prev) {
                return Err(Error::arg("schedule must be non-decreasing"));
            }
            prev = a;
        }
        Ok(())
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Identity => f.write_str("identity"),
            Schedule::Power(g) => write!(f, "power:{g}"),
            Schedule::Custom(_) => f.write_str("custom"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// `identity` or `power:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            return Ok(Schedule::Identity);
        }
        match s.strip_prefix("power:").map(|g| g.parse::<f64>()) {
            Some(Ok(g)) => Ok(Schedule::Power(g)),
            _ => Err(Error::arg(format!("unknown schedule '{s}' (expected identity or power:<gamma>)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decode {
    /// Nearest vertex, lowest index on ties.
    Argmax,
    /// Draw from the categorical `p = x^2` at each position.
    Categorical,
}

impl fmt::Display for Decode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decode::Argmax => "argmax",
            Decode::Categorical => "categorical",
        })
    }
}

impl FromStr for Decode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "argmax" => Ok(Decode::Argmax),
            "categorical" | "categorical_sample" => Ok(Decode::Categorical),
            other => Err(Error::arg(format!("unknown decode '{other}' (expected argmax or categorical)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub scheme: Scheme,
    pub schedule: Schedule,
    pub decode: Decode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 100, scheme: Scheme::VelocityEuler, schedule: Schedule::Identity, decode: Decode::Argmax, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("sampler needs at least one step"));
        }
        self.schedule.validate(1000)
    }

    /// Fields as `key=value` pairs; the seed is owned by the caller's run config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sampler_steps", self.steps.to_string()),
            ("scheme", self.scheme.to_string()),
            ("schedule", self.schedule.to_string()),
            ("decode", self.decode.to_string()),
        ]
    }

    /// Sets one field by key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "sampler_steps" => self.steps = parse(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "schedule" => self.schedule = value.parse()?,
            "decode" => self.decode = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub length: usize,
    pub classes: usize,
    /// Decoded categories, row-major `n x k`.
    pub indices: Vec<u32>,
    /// Final sphere coordinates, one row per sample.
    pub points: Array2<f64>,
    /// Number of position updates that left the orthant and were clipped back.
    pub orthant_exits: u64,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.length..(i + 1) * self.length]
    }
}

/// Field at every row of the sphere-coordinate batch `x`, in sphere coordinates.
///
/// Simplex-chart models see `p = x^2` and their output `u_p` is mapped back
/// with the pushforward `u_p / (2 sqrt(p))`.
fn sphere_field(model: &FieldModel, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let ts = vec![t; x.nrows()];
    match model.spec().chart {
        Chart::Sphere => model.forward_batch(&ts, x, None),
        Chart::Simplex => {
            let p = x.mapv(|s| s * s);
            let mut v = model.forward_batch(&ts, p.view(), None)?;
            v.zip_mut_with(&x, |vi, &s| *vi /= 2.0 * s.max(crate::field::SIMPLEX_METRIC_FLOOR.sqrt()));
            Ok(v)
        }
    }
}

/// `exp_x(v)` per position in place, clipping back onto the orthant on exit.
fn exp_rows(x: &mut Array2<f64>, v: &Array2<f64>, w: usize) -> u64 {
    let mut exits = 0;
    let mut out = vec![0.0; w];
    for (mut xr, vr) in x.rows_mut().into_iter().zip(v.rows()) {
        let xr = xr.as_slice_mut().expect("standard layout");
        for (xp, vp) in xr.chunks_mut(w).zip(vr.as_slice().expect("standard layout").chunks(w)) {
            let min = raw::exp_into(xp, vp, &mut out);
            xp.copy_from_slice(&out);
            if min < 0.0 {
                exits += 1;
                raw::clip_and_normalize(xp);
            } else {
                let n = raw::norm(xp);
                xp.iter_mut().for_each(|c| *c /= n);
            }
        }
    }
    exits
}

/// A vector field on batches of sphere-coordinate rows.
pub type BatchField<'a> = dyn Fn(f64, ArrayView2<f64>) -> Result<Array2<f64>> + Sync + 'a;

/// One geodesic Euler step of size `h` for every row of `x`; returns the clip count.
fn velocity_rows(field: &BatchField, w: usize, x: &mut Array2<f64>, t: f64, h: f64) -> Result<u64> {
    if h == 0.0 {
        return Ok(0);
    }
    let v = field(t, x.view())? * h;
    Ok(exp_rows(x, &v, w))
}

/// Moves every row of `x` towards `target` by `fraction` of the geodesic.
fn toward_rows(x: &mut Array2<f64>, target: &Array2<f64>, fraction: f64, w: usize) -> u64 {
    let mut v = Array2::zeros(x.dim());
    for ((xr, tr), mut vr) in x.rows().into_iter().zip(target.rows()).zip(v.rows_mut()) {
        let vr = vr.as_slice_mut().expect("standard layout");
        let (xr, tr) = (xr.as_slice().expect("standard layout"), tr.as_slice().expect("standard layout"));
        for ((xp, tp), vp) in xr.chunks(w).zip(tr.chunks(w)).zip(vr.chunks_mut(w)) {
            raw::log_into(xp, tp, vp);
            vp.iter_mut().for_each(|c| *c *= fraction);
        }
    }
    exp_rows(x, &v, w)
}

/// One endpoint-scheme step of every row of `x` towards the model's endpoint prediction.
fn endpoint_rows(field: &BatchField, w: usize, x: &mut Array2<f64>, t: f64, dt: f64, schedule: &Schedule) -> Result<u64> {
    let mut x1_hat = x.clone();
    let v = field(t, x.view())? * (1.0 - t);
    let mut exits = exp_rows(&mut x1_hat, &v, w);
    let alpha = schedule.alpha(t);
    if alpha >= TERMINAL_ALPHA {
        x.assign(&x1_hat);
        return Ok(exits);
    }
    let fraction = schedule.derivative(t) * dt / (1.0 - alpha);
    exits += toward_rows(x, &x1_hat, fraction, w);
    Ok(exits)
}

fn to_matrix(x: &ProductPoint<SpherePoint>) -> Array2<f64> {
    let flat = x.flatten();
    Array2::from_shape_vec((1, flat.len()), flat).expect("one row")
}

fn from_matrix(m: &Array2<f64>, k: usize) -> Result<ProductPoint<SpherePoint>> {
    ProductPoint::from_flat(m.row(0).as_slice().expect("standard layout"), k)
}

fn check_model_shape(model: &FieldModel, x: &ProductPoint<SpherePoint>) -> Result<()> {
    let spec = model.spec();
    if x.len() != spec.length || x.dim() != spec.dim {
        return Err(Error::arg(format!(
            "point has k={} d={} but the model expects k={} d={}",
            x.len(),
            x.dim(),
            spec.length,
            spec.dim
        )));
    }
    Ok(())
}

/// Geodesic Euler step `exp_x(h v(t, x))` at every position.
///
/// Returns the new point and how many positions were clipped back onto the orthant.
pub fn step_velocity(
    model: &FieldModel,
    x: &ProductPoint<SpherePoint>,
    t: f64,
    h: f64,
) -> Result<(ProductPoint<SpherePoint>, u64)> {
    check_model_shape(model, x)?;
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&(t + h)) {
        return Err(Error::arg(format!("step from {t} by {h} leaves [0, 1]")));
    }
    let mut m = to_matrix(x);
    let field = |t: f64, x: ArrayView2<f64>| sphere_field(model, t, x);
    let exits = velocity_rows(&field, x.dim() + 1, &mut m, t, h)?;
    Ok((from_matrix(&m, x.len())?, exits))
}

/// Endpoint-scheme step from `x` at time `t` towards a given endpoint `x1_hat`:
/// `exp_x(alpha'(t) dt / (1 - alpha(t)) log_x(x1_hat))`.
///
/// Once `alpha(t)` reaches 1 the step returns `x1_hat` itself.
pub fn step_endpoint(
    x: &ProductPoint<SpherePoint>,
    t: f64,
    dt: f64,
    x1_hat: &ProductPoint<SpherePoint>,
    schedule: &Schedule,
) -> Result<ProductPoint<SpherePoint>> {
    if x.len() != x1_hat.len() || x.dim() != x1_hat.dim() {
        return Err(Error::arg("point and endpoint shapes differ"));
    }
    let alpha = schedule.alpha(t);
    if alpha >= TERMINAL_ALPHA {
        return Ok(x1_hat.clone());
    }
    let fraction = schedule.derivative(t) * dt / (1.0 - alpha);
    let mut m = to_matrix(x);
    toward_rows(&mut m, &to_matrix(x1_hat), fraction, x.dim() + 1);
    from_matrix(&m, x.len())
}

/// Integrates a batch of sphere-coordinate rows from `t = 0` to `t = 1`
/// under the model's field; returns the clip count.
pub fn integrate(model: &FieldModel, x: &mut Array2<f64>, cfg: &SamplerConfig) -> Result<u64> {
    // Every step of a vanishing field is the identity.
    if model.is_zero_field() {
        return Ok(0);
    }
    let field = |t: f64, x: ArrayView2<f64>| sphere_field(model, t, x);
    integrate_field(&field, model.spec().point_width(), x, cfg)
}

/// As [`integrate`] for an arbitrary field over positions of width `w`.
pub fn integrate_field(field: &BatchField, w: usize, x: &mut Array2<f64>, cfg: &SamplerConfig) -> Result<u64> {
    if w == 0 || !x.ncols().is_multiple_of(w) {
        return Err(Error::arg(format!("rows of width {} do not split into positions of width {w}", x.ncols())));
    }
    let dt = 1.0 / cfg.steps as f64;
    let mut exits = 0;
    for n in 0..cfg.steps {
        let t = n as f64 * dt;
        exits += match cfg.scheme {
            Scheme::VelocityEuler => velocity_rows(field, w, x, t, dt)?,
            Scheme::EndpointGeodesic => endpoint_rows(field, w, x, t, dt, &cfg.schedule)?,
        };
    }
    Ok(exits)
}

/// Decodes one sphere-coordinate row into `out`.
fn decode_row<R: rand::Rng + ?Sized>(x: &[f64], w: usize, decode: Decode, rng: &mut R, out: &mut [u32]) -> Result<()> {
    for (o, xp) in out.iter_mut().zip(x.chunks(w)) {
        *o = match decode {
            Decode::Argmax => raw::argmax(xp) as u32,
            Decode::Categorical => {
                let dist = WeightedIndex::new(xp.iter().map(|c| c * c))
                    .map_err(|e| Error::NumericalDomain(format!("cannot decode point: {e}")))?;
                dist.sample(rng) as u32
            }
        };
    }
    Ok(())
}

/// Draws `n` samples from the model.
///
/// Sample `i` belongs to chunk `i / CHUNK_SIZE`, whose prior and decode draws
/// come from streams keyed by the chunk index.
pub fn generate(model: &FieldModel, n: usize, cfg: &SamplerConfig) -> Result<Samples> {
    cfg.validate()?;
    let spec = *model.spec();
    let (w, width, k) = (spec.point_width(), spec.state_width(), spec.length);
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK_SIZE)).collect();
    let results: Vec<Result<(Array2<f64>, Vec<u32>, u64)>> = chunks
        .par_iter()
        .map(|&c| {
            let start = c * CHUNK_SIZE;
            let rows = CHUNK_SIZE.min(n - start);
            let mut prior = chunk_stream(cfg.seed, Purpose::Sampling, c as u64);
            let mut x = Array2::zeros((rows, width));
            for mut row in x.rows_mut() {
                for chunk in row.as_slice_mut().expect("standard layout").chunks_mut(w) {
                    fill_uniform_prior(chunk, &mut prior);
                }
            }
            let exits = integrate(model, &mut x, cfg)
                .map_err(|e| Error::Sampling { index: start, source: Box::new(e) })?;
            let mut decode_rng = chunk_stream(cfg.seed, Purpose::Decode, c as u64);
            let mut idx = vec![0u32; rows * k];
            for (r, (xr, out)) in x.rows().into_iter().zip(idx.chunks_mut(k)).enumerate() {
                decode_row(xr.as_slice().expect("standard layout"), w, cfg.decode, &mut decode_rng, out)
                    .map_err(|e| Error::Sampling { index: start + r, source: Box::new(e) })?;
            }
            Ok((x, idx, exits))
        })
        .collect();

    let mut views = Vec::with_capacity(results.len());
    let mut indices = Vec::with_capacity(n * k);
    let mut exits = 0;
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        let (x, idx, e) = r?;
        indices.extend_from_slice(&idx);
        exits += e;
        parts.push(x);
    }
    for p in &parts {
        views.push(p.view());
    }
    let points = if views.is_empty() {
        Array2::zeros((0, width))
    } else {
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    Ok(Samples { length: k, classes: w, indices, points, orthant_exits: exits })
}

/// Scores models by sampling and comparing against a reference; used during training.
pub struct SamplingEvaluator<F> {
    pub samples: usize,
    pub sampler: SamplerConfig,
    pub score: F,
}

impl<F: Fn(&Samples) -> Result<f64>> Evaluator for SamplingEvaluator<F> {
    fn evaluate(&self, model: &FieldModel) -> Result<f64> {
        let s = generate(model, self.samples, &self.sampler)?;
        (self.score)(&s)
    }
}
