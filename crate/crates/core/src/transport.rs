//! Minibatch optimal-transport couplings between prior and data samples.
//!
//! The cost between two product points is their squared product geodesic
//! distance. Plans are computed with entropic regularisation by alternating
//! Sinkhorn updates of the dual potentials in the log domain, so costs of
//! order `k pi^2 / 4` never underflow at small regularisation.

use ndarray::{Array2, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ProductPoint, SpherePoint};

/// How the entropic regulariser is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// A fixed value in cost units.
    Absolute(f64),
    /// A multiple of the median entry of the cost matrix.
    MedianScaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: Regularization,
    pub max_iters: usize,
    /// Largest tolerated violation of a row or column marginal.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: Regularization::MedianScaled(0.05),
            max_iters: 1000,
            tolerance: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = match self.epsilon {
            Regularization::Absolute(e) | Regularization::MedianScaled(e) => e,
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::arg(format!("entropic regulariser must be positive, got {eps}")));
        }
        if self.max_iters == 0 {
            return Err(Error::arg("sinkhorn needs at least one iteration"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::arg("sinkhorn tolerance must be positive"));
        }
        Ok(())
    }
}

/// A transport plan between `n` source and `m` target samples with uniform marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    plan: Array2<f64>,
    cost_value: f64,
    converged: bool,
    iterations: usize,
    marginal_error: f64,
    epsilon: f64,
}

impl Coupling {
    /// The independent coupling `a b^T`. `cost_value` is the mean cost.
    pub fn independent(cost: ArrayView2<f64>) -> Result<Self> {
        let (n, m) = cost.dim();
        if n == 0 || m == 0 {
            return Err(Error::arg("empty cost matrix"));
        }
        let w = 1.0 / (n * m) as f64;
        Ok(Coupling {
            plan: Array2::from_elem((n, m), w),
            cost_value: cost.sum() * w,
            converged: true,
            iterations: 0,
            marginal_error: 0.0,
            epsilon: f64::INFINITY,
        })
    }

    /// Wraps an explicit plan; entries must be non-negative and finite.
    pub fn from_plan(plan: Array2<f64>, cost: ArrayView2<f64>) -> Result<Self> {
        if plan.dim() != cost.dim() {
            return Err(Error::arg("plan and cost shapes differ"));
        }
        if plan.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::arg("plan entries must be finite and non-negative"));
        }
        let cost_value = (&plan * &cost).sum();
        let marginal_error = marginal_violation(plan.view());
        Ok(Coupling { plan, cost_value, converged: true, iterations: 0, marginal_error, epsilon: 0.0 })
    }

    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    /// Transport cost `<plan, cost>`.
    pub fn cost_value(&self) -> f64 {
        self.cost_value
    }

    /// False when the iteration cap was hit before the marginals met the tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest absolute deviation of a row or column sum from `1/n` or `1/m`.
    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }

    /// Regulariser actually used, in cost units.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

fn marginal_violation(plan: ArrayView2<f64>) -> f64 {
    let (n, m) = plan.dim();
    let row = plan
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0 / n as f64).abs())
        .fold(0.0, f64::max);
    let col = plan
        .columns()
        .into_iter()
        .map(|c| (c.sum() - 1.0 / m as f64).abs())
        .fold(0.0, f64::max);
    row.max(col)
}

/// Squared product geodesic distances between every source and target.
pub fn pairwise_cost(
    source: &[ProductPoint<SpherePoint>],
    target: &[ProductPoint<SpherePoint>],
) -> Result<Array2<f64>> {
    let shape = source
        .first()
        .or_else(|| target.first())
        .map(|p| (p.len(), p.dim()))
        .ok_or_else(|| Error::arg("no points to compare"))?;
    for p in source.iter().chain(target) {
        if (p.len(), p.dim()) != shape {
            return Err(Error::arg(format!(
                "point of shape ({}, {}) does not match ({}, {})",
                p.len(),
                p.dim(),
                shape.0,
                shape.1
            )));
        }
    }
    let flat = |pts: &[ProductPoint<SpherePoint>]| {
        let width = shape.0 * (shape.1 + 1);
        let data: Vec<f64> = pts.iter().flat_map(|p| p.flatten()).collect();
        Array2::from_shape_vec((pts.len(), width), data).expect("consistent widths")
    };
    pairwise_cost_flat(flat(source).view(), flat(target).view(), shape.1 + 1)
}

/// As [`pairwise_cost`] on rows of concatenated unit vectors of width `point_width`.
pub fn pairwise_cost_flat(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    point_width: usize,
) -> Result<Array2<f64>> {
    if source.ncols() != target.ncols() || point_width == 0 || !source.ncols().is_multiple_of(point_width) {
        return Err(Error::arg(format!(
            "row widths {} and {} are not compatible with positions of width {point_width}",
            source.ncols(),
            target.ncols()
        )));
    }
    let (n, m) = (source.nrows(), target.nrows());
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = source.row(i);
            let a = a.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| a.to_vec());
            (0..m).map(move |j| {
                let b = target.row(j);
                let mut total = 0.0;
                for (pa, pb) in a.chunks(point_width).zip(b.axis_chunks_iter(ndarray::Axis(0), point_width)) {
                    let c: f64 = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).sum();
                    total += c.clamp(-1.0, 1.0).acos().powi(2);
                }
                total
            })
        })
        .collect();
    Ok(Array2::from_shape_vec((n, m), data).expect("n * m entries"))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn resolve_epsilon(cost: ArrayView2<f64>, reg: Regularization) -> f64 {
    match reg {
        Regularization::Absolute(e) => e,
        Regularization::MedianScaled(factor) => {
            let mut entries: Vec<f64> = cost.iter().copied().collect();
            let mid = entries.len() / 2;
            let (_, median, _) = entries.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            let mut scale = *median;
            if scale <= 0.0 {
                scale = cost.mean().unwrap_or(0.0);
            }
            if scale <= 0.0 {
                scale = 1.0;
            }
            factor * scale
        }
    }
}

/// Intermediate stages of the epsilon schedule stop at this violation.
const STAGE_TOLERANCE: f64 = 1e-3;

/// Entropic optimal transport with uniform marginals.
///
/// Potentials `f, g` are updated by exact row and column log-sum-exp
/// normalisation. The regulariser is annealed from the largest cost down to
/// the target epsilon, halving per stage and warm-starting the potentials, so
/// small epsilons do not start from a flat initial guess. After each row
/// update the row marginals are exact; a stage stops there once the column
/// violation is within its tolerance. `max_iters` bounds the total over all
/// stages and hitting it is reported through [`Coupling::converged`].
pub fn sinkhorn(cost: ArrayView2<f64>, cfg: &SinkhornConfig) -> Result<Coupling> {
    cfg.validate()?;
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(Error::arg("empty cost matrix"));
    }
    if let Some(c) = cost.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(Error::arg(format!("cost entries must be finite and non-negative, found {c}")));
    }
    let eps = resolve_epsilon(cost, cfg.epsilon);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let b = 1.0 / m as f64;

    let transposed: Vec<f64> = cost.t().iter().copied().collect();
    let flat: Vec<f64> = cost.iter().copied().collect();
    // Potentials in absolute cost units.
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut lse = vec![0.0; m];
    let mut iterations = 0;

    let mut stage_eps = flat.iter().copied().fold(eps, f64::max);
    let mut converged = loop {
        stage_eps = (stage_eps / 2.0).max(eps);
        let last = stage_eps == eps;
        let tol = if last { cfg.tolerance } else { STAGE_TOLERANCE.max(cfg.tolerance) };
        let inv = 1.0 / stage_eps;
        let mut stage_done = false;
        while iterations < cfg.max_iters {
            iterations += 1;
            for i in 0..n {
                let row = &flat[i * m..(i + 1) * m];
                f[i] = stage_eps * (log_a - log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) * inv)));
            }
            let mut violation: f64 = 0.0;
            for j in 0..m {
                let col = &transposed[j * n..(j + 1) * n];
                lse[j] = log_sum_exp(col.iter().zip(&f).map(|(c, fi)| (fi - c) * inv));
                violation = violation.max(((g[j] * inv + lse[j]).exp() - b).abs());
            }
            if violation <= tol {
                stage_done = true;
                break;
            }
            for j in 0..m {
                g[j] = stage_eps * (log_b - lse[j]);
            }
        }
        if last || !stage_done {
            break last && stage_done;
        }
    };

    let inv = 1.0 / eps;
    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[[i, j]] = ((f[i] + g[j] - flat[i * m + j]) * inv).exp();
        }
    }
    let marginal_error = marginal_violation(plan.view());
    if converged && marginal_error > cfg.tolerance {
        converged = false;
    }
    let cost_value = (&plan * &cost).sum();
    Ok(Coupling { plan, cost_value, converged, iterations, marginal_error, epsilon: eps })
}

/// Draws `batch` index pairs with probability proportional to the plan entries.
pub fn sample_pairs<R: Rng + ?Sized>(coupling: &Coupling, batch: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if batch == 0 {
        return Ok(Vec::new());
    }
    let m = coupling.plan.ncols();
    let weights = WeightedIndex::new(coupling.plan.iter().copied())
        .map_err(|e| Error::arg(format!("cannot sample from plan: {e}")))?;
    Ok((0..batch)
        .map(|_| {
            let flat = weights.sample(rng);
            (flat / m, flat % m)
        })
        .collect())
}
