//! The learned vector field: a residual MLP over the flattened coordinates of
//! a product point and a sinusoidal embedding of time, whose raw ambient
//! output is projected onto the tangent space at every position.
//!
//! Simplex-chart models read `sqrt(p)` and treat the raw output `w` as a
//! covector: the field is `p (w - <p, w>)`, the inverse Fisher-Rao metric
//! applied to `w` and projected onto the sum-zero tangent space. Its metric
//! norm stays bounded as coordinates approach the boundary.
//!
//! Layout: `input -> hidden`, then `depth` residual blocks
//! `h <- h + W silu(h) + b`, then `hidden -> output`. All parameters live in
//! one flat buffer so that the optimiser and checkpoints treat them uniformly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Chart, ProductPoint, SpherePoint, TangentVector};

/// Highest angular frequency of the time embedding.
const MAX_TIME_FREQUENCY: f64 = 100.0;

/// Shape of a [`FieldModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    /// Sequence length `k`.
    pub length: usize,
    /// Per-position dimension `d`; each position has `d + 1` coordinates.
    pub dim: usize,
    pub hidden: usize,
    /// Number of residual blocks.
    pub depth: usize,
    pub time_embed_dim: usize,
    /// Width of the optional conditioning vector appended to the input.
    pub cond_dim: usize,
    /// Chart of the states, the output field and the loss metric.
    pub chart: Chart,
}

impl ModelSpec {
    pub fn new(length: usize, dim: usize) -> Self {
        ModelSpec { length, dim, hidden: 256, depth: 5, time_embed_dim: 64, cond_dim: 0, chart: Chart::Sphere }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(Error::arg("model length, dim and hidden width must be positive"));
        }
        Ok(())
    }

    /// Width of one position, `d + 1`.
    pub fn point_width(&self) -> usize {
        self.dim + 1
    }

    /// Width of the flattened state, `k (d + 1)`.
    pub fn state_width(&self) -> usize {
        self.length * self.point_width()
    }

    pub fn input_width(&self) -> usize {
        self.state_width() + self.time_embed_dim + self.cond_dim
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.hidden, self.input_width())];
        shapes.extend(std::iter::repeat_n((self.hidden, self.hidden), self.depth));
        shapes.push((self.state_width(), self.hidden));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    rows: usize,
    cols: usize,
    weight: usize,
    bias: usize,
}

fn layout(spec: &ModelSpec) -> Vec<Slot> {
    let mut offset = 0;
    spec.layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let slot = Slot { rows, cols, weight: offset, bias: offset + rows * cols };
            offset += rows * cols + rows;
            slot
        })
        .collect()
}

/// Parameters of the vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    spec: ModelSpec,
    params: Vec<f64>,
    slots: Vec<Slot>,
}

/// Loss gradients, congruent with [`FieldModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub values: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(model: &FieldModel) -> Self {
        GradientBuffer { values: vec![0.0; model.params.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One regression batch: times, flattened states and target fields.
///
/// `x` and `target` have one row per sample and `k (d + 1)` columns, in the
/// chart given by `chart`.
#[derive(Debug, Clone)]
pub struct CfmBatch {
    pub chart: Chart,
    pub t: Vec<f64>,
    pub x: Array2<f64>,
    pub target: Array2<f64>,
    pub cond: Option<Array2<f64>>,
}

impl CfmBatch {
    /// Builds a sphere-chart batch from typed points and per-position targets.
    pub fn from_points(samples: &[(f64, ProductPoint<SpherePoint>, Vec<TangentVector>)]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::arg("empty batch"))?;
        let width = first.1.flatten().len();
        let mut x = Array2::zeros((samples.len(), width));
        let mut target = Array2::zeros((samples.len(), width));
        let mut t = Vec::with_capacity(samples.len());
        for (row, (time, point, field)) in samples.iter().enumerate() {
            let flat = point.flatten();
            if flat.len() != width || field.len() != point.len() {
                return Err(Error::arg("batch samples have inconsistent shapes"));
            }
            for v in field {
                v.expect_chart(Chart::Sphere)?;
            }
            for (pos, v) in field.iter().enumerate() {
                v.expect_base(point.positions()[pos].coords())?;
            }
            let flat_field: Vec<f64> = field.iter().flat_map(|v| v.components().iter().copied()).collect();
            if flat_field.len() != width {
                return Err(Error::arg("target field has the wrong width"));
            }
            x.row_mut(row).assign(&ArrayView1::from(&flat));
            target.row_mut(row).assign(&ArrayView1::from(&flat_field));
            t.push(*time);
        }
        Ok(CfmBatch { chart: Chart::Sphere, t, x, target, cond: None })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Intermediate values kept for the backward pass.
struct Trace {
    input: Array2<f64>,
    /// Pre-activations of the input layer and of every residual block.
    hidden: Vec<Array2<f64>>,
    /// `silu` of each entry of `hidden`.
    activated: Vec<Array2<f64>>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s + z * s * (1.0 - s)
}

/// Sinusoidal features `sin(w_j t), cos(w_j t)` with frequencies spaced
/// geometrically in `[1, 100]`; an odd width gets `t` itself as last feature.
pub fn time_embedding(t: f64, width: usize, out: &mut [f64]) {
    let half = width / 2;
    for j in 0..half {
        let freq = if half > 1 {
            (MAX_TIME_FREQUENCY.ln() * j as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        let (s, c) = (freq * t).sin_cos();
        out[2 * j] = s;
        out[2 * j + 1] = c;
    }
    if width % 2 == 1 {
        out[width - 1] = t;
    }
}

fn check_finite(a: &Array2<f64>, layer: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

/// Metric weight floor for simplex-chart losses, matching the interior threshold.
pub const SIMPLEX_METRIC_FLOOR: f64 = crate::geometry::INTERIOR_EPS;

impl FieldModel {
    /// Fan-in scaled Gaussian initialisation with a zero output layer.
    ///
    /// Residual blocks use variance `1 / (fan_in * depth)` so the hidden
    /// state keeps unit scale through the stack.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let slots = layout(&spec);
        let mut params = vec![0.0; spec.parameter_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(crate::rng::Purpose::Init as u64);
        let last = slots.len() - 1;
        for (i, slot) in slots.iter().enumerate() {
            if i == last {
                continue;
            }
            let var = if i == 0 {
                1.0 / slot.cols as f64
            } else {
                1.0 / (slot.cols * spec.depth.max(1)) as f64
            };
            let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
            for w in &mut params[slot.weight..slot.weight + slot.rows * slot.cols] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(FieldModel { spec, params, slots })
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                spec.parameter_count(),
                params.len()
            )));
        }
        Ok(FieldModel { spec, slots: layout(&spec), params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(name, rows, cols, offset)` for each weight and bias tensor.
    pub fn tensor_table(&self) -> Vec<(String, usize, usize, usize)> {
        let mut out = Vec::new();
        let last = self.slots.len() - 1;
        for (i, s) in self.slots.iter().enumerate() {
            let name = match i {
                0 => "input".to_string(),
                i if i == last => "output".to_string(),
                i => format!("block{}", i - 1),
            };
            out.push((format!("{name}.weight"), s.rows, s.cols, s.weight));
            out.push((format!("{name}.bias"), s.rows, 1, s.bias));
        }
        out
    }

    /// True when the output layer is all zeros, so the field vanishes everywhere.
    pub fn is_zero_field(&self) -> bool {
        let s = self.slots[self.spec.depth + 1];
        self.params[s.weight..s.bias + s.rows].iter().all(|&v| v == 0.0)
    }

    fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[layer];
        ArrayView2::from_shape((s.rows, s.cols), &self.params[s.weight..s.weight + s.rows * s.cols])
            .expect("slot shape")
    }

    fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = self.slots[layer];
        ArrayView1::from(&self.params[s.bias..s.bias + s.rows])
    }

    fn check_inputs(&self, t: &[f64], x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<()> {
        if x.ncols() != self.spec.state_width() || t.len() != x.nrows() {
            return Err(Error::arg(format!(
                "batch of {} times and {}x{} states does not fit a model of state width {}",
                t.len(),
                x.nrows(),
                x.ncols(),
                self.spec.state_width()
            )));
        }
        match (cond, self.spec.cond_dim) {
            (None, 0) => Ok(()),
            (Some(c), w) if c.ncols() == w && c.nrows() == x.nrows() => Ok(()),
            _ => Err(Error::arg("conditioning input does not match the model's cond_dim")),
        }
    }

    fn build_input(&self, t: &[f64], x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Array2<f64> {
        let spec = &self.spec;
        let (sw, tw) = (spec.state_width(), spec.time_embed_dim);
        let mut input = Array2::zeros((x.nrows(), spec.input_width()));
        for (r, mut row) in input.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (dst, src) in row[..sw].iter_mut().zip(x.row(r).iter()) {
                *dst = match spec.chart {
                    Chart::Sphere => *src,
                    Chart::Simplex => src.max(0.0).sqrt(),
                };
            }
            time_embedding(t[r], tw, &mut row[sw..sw + tw]);
            if let Some(c) = cond {
                for (dst, src) in row[sw + tw..].iter_mut().zip(c.row(r).iter()) {
                    *dst = *src;
                }
            }
        }
        input
    }

    fn forward_trace(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        cond: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Trace)> {
        self.check_inputs(t, x, cond)?;
        let input = self.build_input(t, x, cond);
        let mut h = input.dot(&self.weight(0).t()) + self.bias(0);
        check_finite(&h, 0)?;
        let mut hidden = Vec::with_capacity(self.spec.depth + 1);
        let mut activated = Vec::with_capacity(self.spec.depth + 1);
        for layer in 1..=self.spec.depth {
            let a = h.mapv(silu);
            let next = &h + &(a.dot(&self.weight(layer).t()) + self.bias(layer));
            check_finite(&next, layer)?;
            hidden.push(h);
            activated.push(a);
            h = next;
        }
        let out_layer = self.spec.depth + 1;
        let a = h.mapv(silu);
        let raw = a.dot(&self.weight(out_layer).t()) + self.bias(out_layer);
        check_finite(&raw, out_layer)?;
        hidden.push(h);
        activated.push(a);
        Ok((raw, Trace { input, hidden, activated }))
    }

    /// Raw ambient network output before tangent projection.
    pub fn forward_raw(&self, t: &[f64], x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(t, x, cond)?.0)
    }

    /// Tangent field at every row of `x`: raw output projected position-wise.
    pub fn forward_batch(&self, t: &[f64], x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        let mut out = self.forward_raw(t, x, cond)?;
        self.project(x, &mut out);
        Ok(out)
    }

    fn project(&self, x: ArrayView2<f64>, out: &mut Array2<f64>) {
        let w = self.spec.point_width();
        for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
            let or = or.as_slice_mut().expect("standard layout");
            for (pos, o) in or.chunks_mut(w).enumerate() {
                let base = xr.slice(ndarray::s![pos * w..(pos + 1) * w]);
                match self.spec.chart {
                    Chart::Sphere => {
                        let inner: f64 = base.iter().zip(o.iter()).map(|(a, b)| a * b).sum();
                        for (oi, bi) in o.iter_mut().zip(base.iter()) {
                            *oi -= inner * bi;
                        }
                    }
                    Chart::Simplex => {
                        let mean: f64 = base.iter().zip(o.iter()).map(|(p, w)| p * w).sum();
                        for (oi, pi) in o.iter_mut().zip(base.iter()) {
                            *oi = pi * (*oi - mean);
                        }
                    }
                }
            }
        }
    }

    /// Applies the transpose of the tangent projection to `g` in place.
    fn project_transpose(&self, x: ArrayView2<f64>, g: &mut Array2<f64>) {
        match self.spec.chart {
            // Orthogonal projections are symmetric.
            Chart::Sphere => self.project(x, g),
            Chart::Simplex => {
                let w = self.spec.point_width();
                for (xr, mut gr) in x.rows().into_iter().zip(g.rows_mut()) {
                    let gr = gr.as_slice_mut().expect("standard layout");
                    for (pos, gp) in gr.chunks_mut(w).enumerate() {
                        let base = xr.slice(ndarray::s![pos * w..(pos + 1) * w]);
                        let inner: f64 = base.iter().zip(gp.iter()).map(|(a, b)| a * b).sum();
                        for (gi, pi) in gp.iter_mut().zip(base.iter()) {
                            *gi = pi * (*gi - inner);
                        }
                    }
                }
            }
        }
    }

    /// Typed single-sample evaluation on the sphere chart.
    pub fn forward(&self, t: f64, x: &ProductPoint<SpherePoint>) -> Result<Vec<TangentVector>> {
        if self.spec.chart != Chart::Sphere {
            return Err(Error::arg("typed forward is defined for sphere-chart models"));
        }
        let flat = x.flatten();
        let view = ArrayView2::from_shape((1, flat.len()), &flat)
            .map_err(|_| Error::arg("state shape"))?;
        let out = self.forward_batch(&[t], view, None)?;
        let w = self.spec.point_width();
        Ok(x.positions()
            .iter()
            .zip(out.row(0).as_slice().expect("standard layout").chunks(w))
            .map(|(p, c)| TangentVector::new_unchecked(Chart::Sphere, p.coords(), c.to_vec()))
            .collect())
    }

    fn check_batch(&self, batch: &CfmBatch) -> Result<()> {
        if batch.chart != self.spec.chart {
            return Err(Error::arg(format!(
                "batch is in the {} chart but the model is in the {} chart",
                batch.chart, self.spec.chart
            )));
        }
        if batch.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        if batch.target.dim() != batch.x.dim() {
            return Err(Error::arg("targets and states have different shapes"));
        }
        Ok(())
    }

    /// Residual `v - u` and its metric weights (1 on the sphere, `1/p` on the simplex).
    fn residual(&self, batch: &CfmBatch, field: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        let residual = field - &batch.target;
        let weights = match self.spec.chart {
            Chart::Sphere => None,
            Chart::Simplex => Some(batch.x.mapv(|p| 1.0 / p.max(SIMPLEX_METRIC_FLOOR))),
        };
        (residual, weights)
    }

    /// Mean over the batch of the summed squared Riemannian norms of `v - u`.
    pub fn cfm_loss(&self, batch: &CfmBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let field = self.forward_batch(&batch.t, batch.x.view(), batch.cond.as_ref().map(|c| c.view()))?;
        let (r, w) = self.residual(batch, &field);
        let sq = match w {
            None => r.mapv(|v| v * v).sum(),
            Some(w) => (&r * &r * &w).sum(),
        };
        Ok(sq / batch.len() as f64)
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn backward(&self, batch: &CfmBatch) -> Result<(f64, GradientBuffer)> {
        self.check_batch(batch)?;
        let cond = batch.cond.as_ref().map(|c| c.view());
        let (raw, trace) = self.forward_trace(&batch.t, batch.x.view(), cond)?;
        let mut field = raw;
        self.project(batch.x.view(), &mut field);
        let (r, w) = self.residual(batch, &field);
        let n = batch.len() as f64;
        let (loss, mut g) = match w {
            None => (r.mapv(|v| v * v).sum() / n, r.mapv(|v| 2.0 * v / n)),
            Some(w) => {
                let weighted = &r * &w;
                ((&weighted * &r).sum() / n, weighted.mapv(|v| 2.0 * v / n))
            }
        };
        self.project_transpose(batch.x.view(), &mut g);

        let mut grads = GradientBuffer::zeros_like(self);
        let depth = self.spec.depth;
        let out_layer = depth + 1;
        self.accumulate(&mut grads, out_layer, &g, &trace.activated[depth]);
        let mut g_h = g.dot(&self.weight(out_layer)) * &trace.hidden[depth].mapv(silu_grad);
        for block in (0..depth).rev() {
            let layer = block + 1;
            self.accumulate(&mut grads, layer, &g_h, &trace.activated[block]);
            let through = g_h.dot(&self.weight(layer)) * &trace.hidden[block].mapv(silu_grad);
            g_h = g_h + through;
        }
        self.accumulate(&mut grads, 0, &g_h, &trace.input);
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        Ok((loss, grads))
    }

    fn accumulate(&self, grads: &mut GradientBuffer, layer: usize, g_out: &Array2<f64>, input: &Array2<f64>) {
        let s = self.slots[layer];
        let dw = g_out.t().dot(input);
        let db: Array1<f64> = g_out.sum_axis(Axis(0));
        let w_slice = &mut grads.values[s.weight..s.weight + s.rows * s.cols];
        for (dst, src) in w_slice.iter_mut().zip(dw.iter()) {
            *dst += src;
        }
        for (dst, src) in grads.values[s.bias..s.bias + s.rows].iter_mut().zip(db.iter()) {
            *dst += src;
        }
    }
}
