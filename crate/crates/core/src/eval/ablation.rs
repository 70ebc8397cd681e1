//! Chart × optimal-transport ablation grid.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;

use super::{estimate_kl, self_sampling_floor, JointTable};
use crate::error::{Error, Result};
use crate::geometry::Chart;
use crate::sampler::{generate, SamplerConfig};
use crate::trainer::{fit, Dataset, TrainConfig};

/// One training configuration of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arm {
    pub chart: Chart,
    pub ot: bool,
}

impl Arm {
    /// The four combinations, OT arms first.
    pub fn grid() -> Vec<Arm> {
        let mut out = Vec::with_capacity(4);
        for chart in [Chart::Sphere, Chart::Simplex] {
            for ot in [true, false] {
                out.push(Arm { chart, ot });
            }
        }
        out
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.chart, if self.ot { "ot" } else { "noot" })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (chart, ot) = s.split_once('-').ok_or_else(|| Error::arg(format!("invalid arm {s:?}")))?;
        let ot = match ot {
            "ot" => true,
            "noot" => false,
            _ => return Err(Error::arg(format!("invalid arm {s:?}, expected <chart>-ot or <chart>-noot"))),
        };
        Ok(Arm { chart: chart.parse()?, ot })
    }
}

#[derive(Debug, Clone)]
pub struct AblationSettings {
    /// Shared training settings; chart, OT flag and seed are overridden per run.
    pub base: TrainConfig,
    /// Sampler settings; the seed is overridden per run.
    pub sampler: SamplerConfig,
    pub eval_samples: usize,
    pub smoothing: f64,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
}

impl AblationSettings {
    /// Training config of one run.
    pub fn run_config(&self, arm: Arm, seed: u64) -> TrainConfig {
        TrainConfig { chart: arm.chart, ot_enabled: arm.ot, seed, ..self.base.clone() }
    }

    pub fn run_sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..self.sampler.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: Arm,
    pub seed: u64,
    /// NaN when the run failed.
    pub kl: f64,
    pub floor_kl: f64,
    /// Mean entropic OT cost over training steps.
    pub ot_cost_mean: f64,
    pub error: Option<String>,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "arm,seed,kl,floor_kl,ot_cost_mean";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.arm, self.seed, self.kl, self.floor_kl, self.ot_cost_mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    pub runs: usize,
    pub failed: usize,
    /// Statistics over successful runs; NaN when none succeeded.
    pub min_kl: f64,
    pub mean_kl: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", AblationRow::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    /// Per-arm statistics in order of first appearance.
    pub fn summaries(&self) -> Vec<ArmSummary> {
        let mut arms: Vec<Arm> = Vec::new();
        for r in &self.rows {
            if !arms.contains(&r.arm) {
                arms.push(r.arm);
            }
        }
        arms.into_iter()
            .map(|arm| {
                let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.arm == arm).collect();
                let kls: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.kl).collect();
                let n = kls.len() as f64;
                let mean = kls.iter().sum::<f64>() / n;
                let std_error = if kls.len() > 1 {
                    (kls.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
                } else {
                    f64::NAN
                };
                ArmSummary {
                    arm,
                    runs: rows.len(),
                    failed: rows.len() - kls.len(),
                    min_kl: kls.iter().copied().reduce(f64::min).unwrap_or(f64::NAN),
                    mean_kl: mean,
                    std_error,
                }
            })
            .collect()
    }

    /// Arm with the lowest mean KL among arms with at least one success.
    pub fn winner(&self) -> Option<ArmSummary> {
        self.summaries().into_iter().filter(|s| s.mean_kl.is_finite()).min_by(|a, b| a.mean_kl.total_cmp(&b.mean_kl))
    }
}

fn run_one(truth: &JointTable, data: &Dataset, settings: &AblationSettings, arm: Arm, seed: u64) -> Result<AblationRow> {
    let out = fit(&settings.run_config(arm, seed), data, None)?;
    let costs: Vec<f64> = out.metrics.iter().filter_map(|m| m.ot_cost).collect();
    let ot_cost_mean = if costs.is_empty() { f64::NAN } else { costs.iter().sum::<f64>() / costs.len() as f64 };
    let samples = generate(&out.final_checkpoint.model, settings.eval_samples, &settings.run_sampler(seed))?;
    Ok(AblationRow {
        arm,
        seed,
        kl: estimate_kl(truth, &samples.indices, settings.smoothing)?,
        floor_kl: self_sampling_floor(truth, settings.eval_samples, settings.smoothing, seed)?,
        ot_cost_mean,
        error: None,
    })
}

/// Trains and scores every `(arm, seed)` on the shared `data`.
///
/// Runs execute in parallel. `observer` sees each row as its run finishes, so
/// rows written from it survive an interruption. A failed run becomes a row
/// with NaN metrics and the error message. The returned rows follow arm-major
/// order regardless of completion order.
pub fn run_ablation(
    truth: &JointTable,
    data: &Dataset,
    settings: &AblationSettings,
    observer: &(dyn Fn(&AblationRow) + Sync),
) -> Result<AblationTable> {
    if settings.seeds.is_empty() || settings.arms.is_empty() {
        return Err(Error::arg("ablation needs at least one arm and one seed"));
    }
    if settings.eval_samples == 0 {
        return Err(Error::arg("ablation needs a positive evaluation sample count"));
    }
    if data.length() != truth.length() || data.classes() != truth.classes() {
        return Err(Error::arg("dataset shape does not match the truth table"));
    }
    let jobs: Vec<(Arm, u64)> =
        settings.arms.iter().flat_map(|&a| settings.seeds.iter().map(move |&s| (a, s))).collect();
    let lock = Mutex::new(());
    let rows: Vec<AblationRow> = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let row = run_one(truth, data, settings, arm, seed).unwrap_or_else(|e| AblationRow {
                arm,
                seed,
                kl: f64::NAN,
                floor_kl: f64::NAN,
                ot_cost_mean: f64::NAN,
                error: Some(e.to_string()),
            });
            let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
            observer(&row);
            row
        })
        .collect();
    Ok(AblationTable { rows })
}
