//! Evaluation: toy target distributions, KL estimation against the truth,
//! density heatmaps on the 2-simplex and the chart/OT ablation harness.

mod ablation;
mod heatmap;
mod smiley;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::Exp1;

pub use ablation::{run_ablation, AblationRow, AblationSettings, AblationTable, Arm, ArmSummary};
pub use heatmap::{density_heatmap, render_svg, TriGrid};
pub use smiley::{smiley_tv, tri_cell, tri_histogram, SmileyMixture, SMILEY_BANDWIDTH, SMILEY_GRID};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::sampler::Samples;
use crate::trainer::Dataset;

/// Largest joint table `make_random_joint` will allocate.
pub const MAX_TABLE_CELLS: usize = 10_000_000;

/// Additive count per cell used by default when estimating KL.
pub const DEFAULT_KL_SMOOTHING: f64 = 0.5;

/// A dense probability table over all `K^k` sequences.
///
/// Cell index of a sequence `(x_0, ..., x_{k-1})` is `sum_i x_i K^(k-1-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    classes: usize,
    length: usize,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(classes: usize, length: usize, probs: Vec<f64>) -> Result<Self> {
        let cells = table_cells(classes, length)?;
        if probs.len() != cells {
            return Err(Error::arg(format!("table has {} entries, expected {cells}", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::arg("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("probabilities sum to {total}, not 1")));
        }
        Ok(JointTable { classes, length, probs })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cell(&self, seq: &[u32]) -> usize {
        seq.iter().fold(0, |acc, &x| acc * self.classes + x as usize)
    }

    /// Distribution of the category at `position`.
    pub fn marginal(&self, position: usize) -> Vec<f64> {
        let stride = self.classes.pow((self.length - 1 - position) as u32);
        let mut out = vec![0.0; self.classes];
        for (cell, p) in self.probs.iter().enumerate() {
            out[(cell / stride) % self.classes] += p;
        }
        out
    }

    /// `n` i.i.d. sequences, row-major.
    pub fn sample(&self, n: usize, rng: &mut crate::rng::Rng) -> Vec<u32> {
        let dist = WeightedIndex::new(&self.probs).expect("a valid table has positive mass");
        let mut out = Vec::with_capacity(n * self.length);
        let mut seq = vec![0u32; self.length];
        for _ in 0..n {
            let mut cell = dist.sample(rng);
            for slot in seq.iter_mut().rev() {
                *slot = (cell % self.classes) as u32;
                cell /= self.classes;
            }
            out.extend_from_slice(&seq);
        }
        out
    }
}

fn table_cells(classes: usize, length: usize) -> Result<usize> {
    if classes < 2 || length == 0 {
        return Err(Error::arg(format!("need K >= 2 and k >= 1, got K={classes} k={length}")));
    }
    let mut cells: usize = 1;
    for _ in 0..length {
        cells = cells
            .checked_mul(classes)
            .filter(|&c| c <= MAX_TABLE_CELLS)
            .ok_or_else(|| Error::arg(format!("K^k = {classes}^{length} exceeds the table bound {MAX_TABLE_CELLS}")))?;
    }
    Ok(cells)
}

/// A target distribution for the synthetic experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyDistribution {
    RandomJoint(JointTable),
    Smiley(SmileyMixture),
}

impl ToyDistribution {
    pub fn length(&self) -> usize {
        match self {
            ToyDistribution::RandomJoint(t) => t.length,
            ToyDistribution::Smiley(_) => 1,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ToyDistribution::RandomJoint(t) => t.classes,
            ToyDistribution::Smiley(_) => 3,
        }
    }
}

/// A dense table over `K^k` outcomes drawn from a symmetric Dirichlet(1).
pub fn make_random_joint(classes: usize, length: usize, seed: u64) -> Result<JointTable> {
    let cells = table_cells(classes, length)?;
    let mut rng = stream(seed, Purpose::Distribution);
    // Normalised i.i.d. Exp(1) draws are Dirichlet(1, ..., 1).
    let mut probs: Vec<f64> = (0..cells).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    JointTable::new(classes, length, probs)
}

/// `n` i.i.d. training rows from `dist`.
pub fn sample_dataset(dist: &ToyDistribution, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, Purpose::Dataset);
    match dist {
        ToyDistribution::RandomJoint(t) => Dataset::categorical(t.length, t.classes, t.sample(n, &mut rng)),
        ToyDistribution::Smiley(m) => Dataset::continuous(1, 3, m.sample(n, &mut rng)),
    }
}

/// `KL(q || p)` where `q` is the empirical table of `sequences` with
/// `smoothing` added to every cell count.
///
/// Returns infinity when `q` puts mass on a cell where `p` is zero.
pub fn estimate_kl(truth: &JointTable, sequences: &[u32], smoothing: f64) -> Result<f64> {
    if !(smoothing >= 0.0) {
        return Err(Error::arg("smoothing count must be non-negative"));
    }
    if sequences.is_empty() || !sequences.len().is_multiple_of(truth.length) {
        return Err(Error::arg("samples do not form whole sequences"));
    }
    let mut counts = vec![0.0f64; truth.probs.len()];
    for seq in sequences.chunks(truth.length) {
        if let Some(bad) = seq.iter().find(|&&x| x as usize >= truth.classes) {
            return Err(Error::arg(format!("category {bad} out of range for K={}", truth.classes)));
        }
        counts[truth.cell(seq)] += 1.0;
    }
    let n = (sequences.len() / truth.length) as f64;
    let total = n + smoothing * counts.len() as f64;
    let mut kl = 0.0;
    for (c, &p) in counts.iter().zip(&truth.probs) {
        let q = (c + smoothing) / total;
        if q > 0.0 {
            if p == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += q * (q / p).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// KL of `n` exact samples from the truth: the estimator's own finite-sample bias.
pub fn self_sampling_floor(truth: &JointTable, n: usize, smoothing: f64, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Purpose::Floor);
    estimate_kl(truth, &truth.sample(n, &mut rng), smoothing)
}

/// Empirical per-position category frequencies, `[position][class]`.
pub fn class_frequencies(sequences: &[u32], length: usize, classes: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; classes]; length];
    let n = sequences.len() / length.max(1);
    for seq in sequences.chunks(length) {
        for (pos, &x) in seq.iter().enumerate() {
            out[pos][x as usize] += 1.0;
        }
    }
    if n > 0 {
        out.iter_mut().flatten().for_each(|f| *f /= n as f64);
    }
    out
}

/// One evaluation of a set of samples against a joint table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub kl: f64,
    pub floor_kl: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub frequencies: Vec<Vec<f64>>,
}

impl MetricsRecord {
    /// Scores `samples` against `truth`, with a self-sampling floor of the same size.
    pub fn evaluate(truth: &JointTable, sequences: &[u32], smoothing: f64, seed: u64, config_hash: &str) -> Result<Self> {
        let n = sequences.len() / truth.length;
        if n == 0 {
            return Err(Error::arg("no samples to evaluate"));
        }
        Ok(MetricsRecord {
            kl: estimate_kl(truth, sequences, smoothing)?,
            floor_kl: self_sampling_floor(truth, n, smoothing, seed)?,
            sample_count: n,
            seed,
            config_hash: config_hash.to_string(),
            frequencies: class_frequencies(sequences, truth.length, truth.classes),
        })
    }

    pub fn kl_is_infinite(&self) -> bool {
        self.kl.is_infinite()
    }
}

/// Simplex coordinates `p = x^2` of generated samples on a single position.
pub fn simplex_coords(samples: &Samples) -> Vec<f64> {
    samples.points.iter().map(|s| s * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_joint_examples() {
        let t = make_random_joint(2, 1, 3).unwrap();
        assert_eq!(t.probs().len(), 2);
        assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(make_random_joint(4, 4, 9).unwrap(), make_random_joint(4, 4, 9).unwrap());
        assert_ne!(make_random_joint(4, 4, 9).unwrap(), make_random_joint(4, 4, 10).unwrap());
        assert!(make_random_joint(1, 4, 0).is_err());
        assert!(make_random_joint(10, 8, 0).is_err());
        assert!(make_random_joint(10, 7, 0).is_ok());
    }

    #[test]
    fn marginals_match_looped_sum() {
        let t = make_random_joint(3, 3, 1).unwrap();
        for pos in 0..3 {
            let mut oracle = [0.0; 3];
            for a in 0..3u32 {
                for b in 0..3u32 {
                    for c in 0..3u32 {
                        let seq = [a, b, c];
                        oracle[seq[pos] as usize] += t.probs()[t.cell(&seq)];
                    }
                }
            }
            for (m, o) in t.marginal(pos).iter().zip(oracle) {
                assert!((m - o).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dataset_frequencies_converge() {
        let t = make_random_joint(2, 2, 4).unwrap();
        let data = sample_dataset(&ToyDistribution::RandomJoint(t.clone()), 1_000_000, 5).unwrap();
        assert_eq!(data.len(), 1_000_000);
        let Dataset::Categorical { indices, .. } = &data else { panic!("categorical expected") };
        assert!(indices.iter().all(|&x| x < 2));
        let mut counts = [0.0; 4];
        for seq in indices.chunks(2) {
            counts[t.cell(seq)] += 1.0;
        }
        let tv: f64 = counts.iter().zip(t.probs()).map(|(c, p)| (c / 1e6 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.01, "{tv}");
        let again = sample_dataset(&ToyDistribution::RandomJoint(t), 1000, 5).unwrap();
        let Dataset::Categorical { indices: first, .. } = again else { unreachable!() };
        assert_eq!(&first[..], &indices[..2000]);
    }

    /// Straightforward loop over cells with explicit normalisation.
    fn naive_kl(truth: &JointTable, seqs: &[u32], s: f64) -> f64 {
        let cells = truth.probs().len();
        let mut counts = vec![0usize; cells];
        for seq in seqs.chunks(truth.length()) {
            let mut idx = 0;
            for &x in seq {
                idx = idx * truth.classes() + x as usize;
            }
            counts[idx] += 1;
        }
        let q: Vec<f64> = counts.iter().map(|&c| c as f64 + s).collect();
        let z: f64 = q.iter().sum();
        let mut kl = 0.0;
        for i in 0..cells {
            let qi = q[i] / z;
            if qi > 0.0 {
                kl += qi * (qi.ln() - truth.probs()[i].ln());
            }
        }
        kl
    }

    #[test]
    fn kl_examples() {
        let t = make_random_joint(3, 2, 6).unwrap();
        let mut rng = stream(7, Purpose::Floor);
        let seqs = t.sample(5000, &mut rng);
        for s in [0.0, 0.5, 2.0] {
            let a = estimate_kl(&t, &seqs, s).unwrap();
            assert!((a - naive_kl(&t, &seqs, s)).abs() <= 1e-12);
            assert!(a >= 0.0);
        }
        // Order invariance.
        let mut reversed: Vec<u32> = seqs.chunks(2).rev().flatten().copied().collect();
        assert_eq!(estimate_kl(&t, &seqs, 0.5).unwrap(), estimate_kl(&t, &reversed, 0.5).unwrap());
        reversed.truncate(3);
        assert!(estimate_kl(&t, &reversed, 0.5).is_err());

        // Samples whose empirical table equals the truth give zero.
        let exact = JointTable::new(2, 1, vec![0.25, 0.75]).unwrap();
        assert!(estimate_kl(&exact, &[0, 1, 1, 1], 0.0).unwrap().abs() < 1e-15);

        let holes = JointTable::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(estimate_kl(&holes, &[0, 1], 0.0).unwrap().is_infinite());
    }

    #[test]
    fn self_sampling_floor_is_small_at_full_scale() {
        let t = make_random_joint(4, 4, 0).unwrap();
        let floor = self_sampling_floor(&t, 512_000, DEFAULT_KL_SMOOTHING, 0).unwrap();
        assert!(floor > 0.0 && floor <= 0.01, "{floor}");
    }

    #[test]
    fn metrics_record_fields() {
        let t = make_random_joint(2, 2, 1).unwrap();
        let mut rng = stream(2, Purpose::Floor);
        let seqs = t.sample(1000, &mut rng);
        let rec = MetricsRecord::evaluate(&t, &seqs, 0.5, 3, "abc").unwrap();
        assert_eq!(rec.sample_count, 1000);
        assert_eq!(rec.frequencies.len(), 2);
        for f in &rec.frequencies {
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(!rec.kl_is_infinite());
    }
}
