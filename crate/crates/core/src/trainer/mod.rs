//! Flow-matching training: minibatch sampling, optional OT coupling,
//! geodesic interpolation, target regression and AdamW updates.
//!
//! Data sits at `t = 1` and the prior at `t = 0`. Each step draws a batch of
//! data rows and an equal number of prior points, pairs them (by an entropic
//! OT plan or independently), draws `t ~ U[0, 1 - time_clamp)` per pair and
//! regresses the field at the interpolant onto the conditional target.

mod checkpoint;
mod config;
mod data;
mod optim;

use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::TrainConfig;
pub(crate) use config::parse;
pub use data::Dataset;
pub use optim::{update_params, AdamHyper, AdamState};

use crate::error::{Error, Result};
use crate::field::{CfmBatch, FieldModel, ModelSpec};
use crate::geometry::{fill_uniform_prior, raw, Chart};
use crate::rng::{stream, Purpose, Rng, RngState};
use crate::transport::{pairwise_cost_flat, sample_pairs, sinkhorn, Coupling};

/// Scores a model during training; lower is better.
pub trait Evaluator {
    fn evaluate(&self, model: &FieldModel) -> Result<f64>;
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    /// Loss before the update of this step; absent for an evaluation-only row.
    pub loss: Option<f64>,
    pub wallclock_s: f64,
    pub eval_kl: Option<f64>,
    /// Expected cost of the coupling used for this step's pairs.
    pub ot_cost: Option<f64>,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "step,loss,wallclock_s,eval_kl,ot_cost";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{:.3},{},{}",
            self.step,
            opt(self.loss),
            self.wallclock_s,
            opt(self.eval_kl),
            opt(self.ot_cost)
        )
    }
}

/// Outcome of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub ot_cost: f64,
    pub coupling_converged: bool,
}

#[derive(Debug, Clone)]
struct Streams {
    data_order: Rng,
    prior: Rng,
    time: Rng,
    pairing: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            data_order: stream(seed, Purpose::DataOrder),
            prior: stream(seed, Purpose::Prior),
            time: stream(seed, Purpose::Time),
            pairing: stream(seed, Purpose::Pairing),
        }
    }

    fn capture(&self) -> [RngState; 4] {
        [&self.data_order, &self.prior, &self.time, &self.pairing].map(RngState::capture)
    }

    fn restore(states: &[RngState; 4]) -> Self {
        Streams {
            data_order: states[0].restore(),
            prior: states[1].restore(),
            time: states[2].restore(),
            pairing: states[3].restore(),
        }
    }
}

/// Mutable training state; the single writer of model parameters.
#[derive(Debug, Clone)]
pub struct TrainState {
    config: TrainConfig,
    model: FieldModel,
    optimizer: AdamState,
    step: u64,
    streams: Streams,
}

impl TrainState {
    /// Fresh state for sequences of `length` positions over `dim + 1` classes.
    pub fn new(config: TrainConfig, length: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec {
            length,
            dim,
            hidden: config.hidden,
            depth: config.depth,
            time_embed_dim: config.time_embed_dim,
            cond_dim: 0,
            chart: config.chart,
        };
        let model = FieldModel::init(spec, config.seed)?;
        let optimizer = AdamState::new(model.params().len());
        let streams = Streams::new(config.seed);
        Ok(TrainState { config, model, optimizer, step: 0, streams })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        if ckpt.model.spec().chart != ckpt.config.chart {
            return Err(Error::Format("checkpoint model chart disagrees with its config".into()));
        }
        Ok(TrainState {
            config: ckpt.config,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            step: ckpt.step,
            streams: Streams::restore(&ckpt.rng),
        })
    }

    pub fn checkpoint(&self, eval_kl: Option<f64>) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            step: self.step,
            rng: self.streams.capture(),
            eval_kl,
        }
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Overrides the total step budget, e.g. when resuming with a longer run.
    pub fn set_steps(&mut self, steps: u64) {
        self.config.steps = steps;
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let spec = self.model.spec();
        if data.length() != spec.length || data.dim() != spec.dim {
            return Err(Error::arg(format!(
                "dataset has k={} d={} but the model expects k={} d={}",
                data.length(),
                data.dim(),
                spec.length,
                spec.dim
            )));
        }
        if data.is_empty() {
            return Err(Error::arg("dataset is empty"));
        }
        Ok(())
    }

    /// Draws the next batch of data rows as sphere coordinates.
    fn next_data_batch(&mut self, data: &Dataset) -> Array2<f64> {
        let b = self.config.batch_size;
        let mut x1 = Array2::zeros((b, self.model.spec().state_width()));
        for mut row in x1.rows_mut() {
            let i = self.streams.data_order.random_range(0..data.len());
            data.fill_sphere_row(i, self.config.smoothing, row.as_slice_mut().expect("standard layout"));
        }
        x1
    }

    /// One step of the training loop on the data batch `x1` (sphere coordinates,
    /// one row per sequence).
    ///
    /// On error the model, optimizer and random streams are left untouched.
    pub fn train_step(&mut self, x1: &Array2<f64>) -> Result<StepReport> {
        let step = self.step;
        self.try_step(x1).map_err(|e| Error::TrainingAborted { step, source: Box::new(e) })
    }

    fn try_step(&mut self, x1: &Array2<f64>) -> Result<StepReport> {
        let spec = *self.model.spec();
        let (w, width) = (spec.point_width(), spec.state_width());
        if x1.ncols() != width || x1.nrows() == 0 {
            return Err(Error::arg(format!("data batch must have rows of width {width}")));
        }
        let b = x1.nrows();
        let mut prior = self.streams.prior.clone();
        let mut time = self.streams.time.clone();
        let mut pairing = self.streams.pairing.clone();

        let mut x0 = Array2::zeros((b, width));
        for mut row in x0.rows_mut() {
            for chunk in row.as_slice_mut().expect("standard layout").chunks_mut(w) {
                fill_uniform_prior(chunk, &mut prior);
            }
        }
        let cost = pairwise_cost_flat(x0.view(), x1.view(), w)?;
        let coupling = if self.config.ot_enabled {
            sinkhorn(cost.view(), &self.config.sinkhorn)?
        } else {
            Coupling::independent(cost.view())?
        };
        let pairs = sample_pairs(&coupling, b, &mut pairing)?;

        let mut xt = Array2::zeros((b, width));
        let mut ut = Array2::zeros((b, width));
        let mut ts = Vec::with_capacity(b);
        let mut dir = vec![0.0; w];
        let t_max = 1.0 - self.config.time_clamp;
        for (r, &(i, j)) in pairs.iter().enumerate() {
            let t = time.random_range(0.0..t_max);
            ts.push(t);
            let (src, dst) = (x0.row(i), x1.row(j));
            let (src, dst) = (src.as_slice().expect("standard layout"), dst.to_vec());
            let mut xt_row = xt.row_mut(r);
            let xt_row = xt_row.as_slice_mut().expect("standard layout");
            let mut ut_row = ut.row_mut(r);
            let ut_row = ut_row.as_slice_mut().expect("standard layout");
            for pos in 0..spec.length {
                let span = pos * w..(pos + 1) * w;
                raw::geodesic_with_scratch(&src[span.clone()], &dst[span.clone()], t, &mut xt_row[span.clone()], &mut dir);
                raw::target_into(&xt_row[span.clone()], &dst[span.clone()], t, &mut ut_row[span]);
            }
        }
        if spec.chart == Chart::Simplex {
            // p = s^2 and the pushforward inverse u_p = 2 s u_s.
            ut = &ut * &xt * 2.0;
            xt.mapv_inplace(|s| s * s);
        }
        let batch = CfmBatch { chart: spec.chart, t: ts, x: xt, target: ut, cond: None };
        let (loss, grads) = self.model.backward(&batch)?;

        let mut params = self.model.params().to_vec();
        let mut optimizer = self.optimizer.clone();
        update_params(&mut params, &grads, &mut optimizer, &self.config.adam())?;
        self.model.params_mut().copy_from_slice(&params);
        self.optimizer = optimizer;
        self.streams.prior = prior;
        self.streams.time = time;
        self.streams.pairing = pairing;
        self.step += 1;
        Ok(StepReport { loss, ot_cost: coupling.cost_value(), coupling_converged: coupling.converged() })
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub final_checkpoint: Checkpoint,
    /// Lowest evaluation KL seen; the final checkpoint when nothing was evaluated.
    pub best_checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

/// Trains from scratch on `data` for `config.steps` steps.
pub fn fit(config: &TrainConfig, data: &Dataset, evaluator: Option<&dyn Evaluator>) -> Result<FitOutput> {
    let state = TrainState::new(config.clone(), data.length(), data.dim())?;
    fit_from(state, data, evaluator, &mut |_| {})
}

/// Continues `state` until `state.config().steps` steps are complete.
///
/// `observer` sees each metrics row as soon as it is produced. Evaluation
/// runs every `eval_interval` steps and after the last step.
pub fn fit_from(
    mut state: TrainState,
    data: &Dataset,
    evaluator: Option<&dyn Evaluator>,
    observer: &mut dyn FnMut(&MetricsRow),
) -> Result<FitOutput> {
    state.check_dataset(data)?;
    let started = Instant::now();
    let total = state.config.steps;
    let interval = state.config.eval_interval;
    let mut metrics = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;

    let evaluate = |state: &TrainState, best: &mut Option<(f64, Checkpoint)>| -> Result<Option<f64>> {
        let Some(ev) = evaluator else { return Ok(None) };
        let kl = ev.evaluate(&state.model)?;
        if best.as_ref().is_none_or(|(b, _)| kl < *b) {
            *best = Some((kl, state.checkpoint(Some(kl))));
        }
        Ok(Some(kl))
    };

    if state.step >= total {
        let kl = evaluate(&state, &mut best)?;
        if kl.is_some() {
            let row = MetricsRow {
                step: state.step,
                loss: None,
                wallclock_s: started.elapsed().as_secs_f64(),
                eval_kl: kl,
                ot_cost: None,
            };
            observer(&row);
            metrics.push(row);
        }
    }
    let mut last_kl = metrics.last().and_then(|r| r.eval_kl);
    while state.step < total {
        let x1 = state.next_data_batch(data);
        let report = state.train_step(&x1)?;
        let due = state.step == total || (interval > 0 && state.step.is_multiple_of(interval));
        let kl = if due {
            evaluate(&state, &mut best).map_err(|e| Error::TrainingAborted { step: state.step, source: Box::new(e) })?
        } else {
            None
        };
        if kl.is_some() {
            last_kl = kl;
        }
        let row = MetricsRow {
            step: state.step,
            loss: Some(report.loss),
            wallclock_s: started.elapsed().as_secs_f64(),
            eval_kl: kl,
            ot_cost: Some(report.ot_cost),
        };
        observer(&row);
        metrics.push(row);
    }
    let final_checkpoint = state.checkpoint(last_kl);
    let best_checkpoint = best.map(|(_, c)| c).unwrap_or_else(|| final_checkpoint.clone());
    Ok(FitOutput { final_checkpoint, best_checkpoint, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 200,
            batch_size: 32,
            hidden: 32,
            depth: 2,
            time_embed_dim: 8,
            learning_rate: 3e-3,
            seed,
            eval_interval: 0,
            ..TrainConfig::default()
        }
    }

    fn vertex_dataset(n: usize) -> Dataset {
        Dataset::categorical(1, 3, vec![1; n]).unwrap()
    }

    #[test]
    fn loss_drops_on_a_point_mass() {
        for seed in 0..5 {
            let out = fit(&tiny_config(seed), &vertex_dataset(500), None).unwrap();
            let losses: Vec<f64> = out.metrics.iter().filter_map(|r| r.loss).collect();
            assert_eq!(losses.len(), 200);
            let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
            let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
            assert!(tail <= 0.1 * head, "seed {seed}: {head} -> {tail}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig { learning_rate: 0.0, steps: 5, ..tiny_config(1) };
        let data = vertex_dataset(50);
        let state = TrainState::new(cfg.clone(), 1, 2).unwrap();
        let before = state.model().params().to_vec();
        let out = fit_from(state, &data, None, &mut |_| {}).unwrap();
        assert_eq!(out.final_checkpoint.model.params(), &before[..]);
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let cfg = TrainConfig { steps: 20, ..tiny_config(3) };
        let data = Dataset::categorical(2, 3, (0..200).map(|i| (i * 7 % 3) as u32).collect()).unwrap();
        let a = fit(&cfg, &data, None).unwrap();
        let b = fit(&cfg, &data, None).unwrap();
        let la: Vec<_> = a.metrics.iter().map(|r| r.loss).collect();
        let lb: Vec<_> = b.metrics.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.final_checkpoint.model.params(), b.final_checkpoint.model.params());
        let other = fit(&TrainConfig { seed: 4, ..cfg }, &data, None).unwrap();
        assert_ne!(other.metrics[0].loss, a.metrics[0].loss);
    }

    #[test]
    fn zero_steps_returns_initial_state() {
        let cfg = TrainConfig { steps: 0, ..tiny_config(5) };
        let data = vertex_dataset(10);
        let out = fit(&cfg, &data, None).unwrap();
        let init = TrainState::new(cfg, 1, 2).unwrap();
        assert_eq!(out.final_checkpoint.model.params(), init.model().params());
        assert_eq!(out.final_checkpoint.step, 0);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn rejects_mismatched_dataset_before_training() {
        let state = TrainState::new(tiny_config(0), 2, 2).unwrap();
        let err = fit_from(state, &vertex_dataset(10), None, &mut |_| panic!("no rows expected")).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn checkpoint_roundtrip_resumes_bit_identically() {
        for chart in [Chart::Sphere, Chart::Simplex] {
            for ot in [true, false] {
                let cfg = TrainConfig { steps: 6, chart, ot_enabled: ot, ..tiny_config(8) };
                let data = Dataset::categorical(2, 3, (0..60).map(|i| (i % 3) as u32).collect()).unwrap();
                let straight = fit(&cfg, &data, None).unwrap();

                let half = fit(&TrainConfig { steps: 3, ..cfg.clone() }, &data, None).unwrap();
                let bytes = half.final_checkpoint.to_bytes("test checkpoint");
                assert_eq!(Checkpoint::header(&bytes).as_deref(), Some("test checkpoint"));
                let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
                assert_eq!(reloaded, half.final_checkpoint);
                let mut state = TrainState::from_checkpoint(reloaded).unwrap();
                state.set_steps(6);
                let resumed = fit_from(state, &data, None, &mut |_| {}).unwrap();
                assert_eq!(resumed.metrics[0].step, 4);
                assert_eq!(
                    resumed.metrics.iter().map(|r| r.loss).collect::<Vec<_>>(),
                    straight.metrics[3..].iter().map(|r| r.loss).collect::<Vec<_>>()
                );
                assert_eq!(resumed.final_checkpoint.model.params(), straight.final_checkpoint.model.params());
            }
        }
    }

    #[test]
    fn failed_step_leaves_state_unchanged() {
        let mut state = TrainState::new(tiny_config(9), 1, 2).unwrap();
        let before = state.checkpoint(None);
        let bad = Array2::from_elem((4, 3), f64::NAN);
        let err = state.train_step(&bad).unwrap_err();
        assert!(matches!(err, Error::TrainingAborted { step: 0, .. }));
        assert_eq!(state.checkpoint(None), before);
    }

    struct Constant(f64);
    impl Evaluator for Constant {
        fn evaluate(&self, _: &FieldModel) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn evaluation_rows_follow_interval() {
        let cfg = TrainConfig { steps: 10, eval_interval: 4, ..tiny_config(2) };
        let out = fit(&cfg, &vertex_dataset(20), Some(&Constant(0.5))).unwrap();
        let evaluated: Vec<u64> = out.metrics.iter().filter(|r| r.eval_kl.is_some()).map(|r| r.step).collect();
        assert_eq!(evaluated, vec![4, 8, 10]);
        // Ties keep the earliest checkpoint.
        assert_eq!(out.best_checkpoint.step, 4);
        assert_eq!(out.final_checkpoint.eval_kl, Some(0.5));

        let zero = fit(&TrainConfig { steps: 0, ..cfg }, &vertex_dataset(20), Some(&Constant(0.25))).unwrap();
        assert_eq!(zero.metrics.len(), 1);
        assert_eq!(zero.metrics[0].eval_kl, Some(0.25));
        assert_eq!(zero.metrics[0].to_csv(), "0,,0.000,0.25,");
    }
}
