//! A face-shaped density on the 2-simplex and a triangular-grid histogram.
//!
//! Reference definition. Positions are given in the plane of the triangle
//! with vertices `e0 = (0, 0)`, `e1 = (1, 0)`, `e2 = (1/2, sqrt(3)/2)` and
//! converted to barycentric coordinates:
//!
//! - eyes at `(0.40, 0.40)` and `(0.60, 0.40)`, weight 0.15 each;
//! - seven mouth components on the arc of radius 0.17 around `(0.5, 0.30)`
//!   at angles `200 + 140 j / 6` degrees for `j = 0..=6`, weight 0.1 each.
//!
//! Each component adds `N(0, h^2 I_3)` noise with `h = 0.04`, projected onto
//! the plane `sum(p) = 1`, and draws outside the simplex are rejected.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SMILEY_BANDWIDTH: f64 = 0.04;

/// Histogram resolution: the triangle is cut into `r^2` congruent cells.
pub const SMILEY_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SmileyMixture {
    /// `(barycentric mean, weight)` per component.
    pub components: Vec<([f64; 3], f64)>,
    pub bandwidth: f64,
}

fn from_plane(x: f64, y: f64) -> [f64; 3] {
    let p2 = y / (3f64.sqrt() / 2.0);
    let p1 = x - p2 / 2.0;
    [1.0 - p1 - p2, p1, p2]
}

impl Default for SmileyMixture {
    fn default() -> Self {
        let mut components = vec![(from_plane(0.40, 0.40), 0.15), (from_plane(0.60, 0.40), 0.15)];
        for j in 0..=6 {
            let angle = (200.0 + 140.0 * j as f64 / 6.0f64).to_radians();
            components.push((from_plane(0.5 + 0.17 * angle.cos(), 0.30 + 0.17 * angle.sin()), 0.1));
        }
        SmileyMixture { components, bandwidth: SMILEY_BANDWIDTH }
    }
}

impl SmileyMixture {
    /// `n` points on the simplex, row-major `n x 3`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let pick = WeightedIndex::new(self.components.iter().map(|(_, w)| *w)).expect("positive weights");
        let mut out = Vec::with_capacity(3 * n);
        while out.len() < 3 * n {
            let (mean, _) = self.components[pick.sample(rng)];
            let z: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * self.bandwidth);
            let shift = (z[0] + z[1] + z[2]) / 3.0;
            let p: [f64; 3] = std::array::from_fn(|i| mean[i] + z[i] - shift);
            if p.iter().all(|&c| c > 0.0) {
                // Renormalise away rounding so rows sum to 1 to machine precision.
                let s: f64 = p.iter().sum();
                out.extend(p.iter().map(|c| c / s));
            }
        }
        out
    }

    /// Spec lines for a sidecar file, one component per line.
    pub fn describe(&self) -> String {
        let mut s = format!("bandwidth={}\n", self.bandwidth);
        for (m, w) in &self.components {
            s.push_str(&format!("component={},{},{} weight={}\n", m[0], m[1], m[2], w));
        }
        s
    }
}

/// Index of the cell of the `r^2`-cell triangular grid containing `p`.
///
/// Upward cells `(i, j)` with `i + j <= r - 1` come first in row-major order
/// of `j` then `i`, followed by downward cells with `i + j <= r - 2`.
pub fn tri_cell(p: &[f64], r: usize) -> usize {
    let a = (p[1] * r as f64).clamp(0.0, r as f64);
    let b = (p[2] * r as f64).clamp(0.0, r as f64);
    let mut i = (a.floor() as usize).min(r - 1);
    let mut j = (b.floor() as usize).min(r - 1);
    if i + j > r - 1 {
        // Only reachable on the outer edge through rounding; pull back inside.
        let over = i + j - (r - 1);
        if i >= over {
            i -= over;
        } else {
            j -= over;
        }
    }
    let up = (a - i as f64) + (b - j as f64) < 1.0 || i + j == r - 1;
    if up {
        upward_index(i, j, r)
    } else {
        r * (r + 1) / 2 + downward_index(i, j, r)
    }
}

fn upward_index(i: usize, j: usize, r: usize) -> usize {
    // Rows j = 0.. hold r, r-1, ... upward cells.
    (0..j).map(|jj| r - jj).sum::<usize>() + i
}

fn downward_index(i: usize, j: usize, r: usize) -> usize {
    (0..j).map(|jj| r - 1 - jj).sum::<usize>() + i
}

/// Normalised histogram of simplex points (row-major `n x 3`) on `r^2` cells.
pub fn tri_histogram(points: &[f64], r: usize) -> Result<Vec<f64>> {
    if points.is_empty() || !points.len().is_multiple_of(3) {
        return Err(Error::arg("histogram needs a non-empty set of 2-simplex points"));
    }
    let mut h = vec![0.0; r * r];
    for p in points.chunks(3) {
        h[tri_cell(p, r)] += 1.0;
    }
    let n = (points.len() / 3) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

/// Total-variation distance between the 64-cell histograms of two point sets.
pub fn smiley_tv(generated: &[f64], target: &[f64]) -> Result<f64> {
    let a = tri_histogram(generated, SMILEY_GRID)?;
    let b = tri_histogram(target, SMILEY_GRID)?;
    Ok(0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}
