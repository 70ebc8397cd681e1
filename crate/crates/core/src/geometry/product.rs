//! Position-wise lifts to products of `k` copies of the orthant.

use rand::Rng;

use super::{
    geodesic_interpolant, nearest_vertex, sample_uniform_prior, sphere_distance,
    tangent_project, target_field_clamped, SimplexPoint, SpherePoint, TangentVector,
};
use crate::error::{Error, Result};

/// A sequence of `k >= 1` points of equal dimension, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint<P> {
    positions: Vec<P>,
}

pub trait HasDim {
    fn point_dim(&self) -> usize;
}

impl HasDim for SpherePoint {
    fn point_dim(&self) -> usize {
        self.dim()
    }
}

impl HasDim for SimplexPoint {
    fn point_dim(&self) -> usize {
        self.dim()
    }
}

impl<P: HasDim> ProductPoint<P> {
    pub fn new(positions: Vec<P>) -> Result<Self> {
        let first = positions
            .first()
            .ok_or_else(|| Error::arg("a product point needs at least one position"))?
            .point_dim();
        if positions.iter().any(|p| p.point_dim() != first) {
            return Err(Error::arg("all positions of a product point must share a dimension"));
        }
        Ok(ProductPoint { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Per-position dimension `d`.
    pub fn dim(&self) -> usize {
        self.positions[0].point_dim()
    }

    pub fn positions(&self) -> &[P] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<P> {
        self.positions
    }
}

impl ProductPoint<SpherePoint> {
    /// Concatenated coordinates of all positions.
    pub fn flatten(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| p.coords().iter().copied()).collect()
    }

    /// Rebuilds a product point from `k` concatenated unit vectors.
    pub fn from_flat(flat: &[f64], k: usize) -> Result<Self> {
        if k == 0 || !flat.len().is_multiple_of(k) {
            return Err(Error::arg(format!("cannot split {} coordinates into {k} positions", flat.len())));
        }
        let width = flat.len() / k;
        let positions = flat
            .chunks(width)
            .map(|c| SpherePoint::new(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(positions)
    }
}

fn check_shapes(a: &ProductPoint<SpherePoint>, b: &ProductPoint<SpherePoint>) -> Result<()> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::arg(format!(
            "product shape mismatch: ({}, {}) vs ({}, {})",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    Ok(())
}

/// Product geodesic distance: root of the summed squared per-position distances.
pub fn product_distance(a: &ProductPoint<SpherePoint>, b: &ProductPoint<SpherePoint>) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.positions
        .iter()
        .zip(&b.positions)
        .map(|(x, y)| sphere_distance(x, y).powi(2))
        .sum::<f64>()
        .sqrt())
}

pub fn product_geodesic_interpolant(
    x0: &ProductPoint<SpherePoint>,
    x1: &ProductPoint<SpherePoint>,
    t: f64,
) -> Result<ProductPoint<SpherePoint>> {
    check_shapes(x0, x1)?;
    let positions = x0
        .positions
        .iter()
        .zip(&x1.positions)
        .map(|(a, b)| geodesic_interpolant(a, b, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProductPoint { positions })
}

pub fn product_target_field(
    xt: &ProductPoint<SpherePoint>,
    x1: &ProductPoint<SpherePoint>,
    t: f64,
    clamp: f64,
) -> Result<Vec<TangentVector>> {
    check_shapes(xt, x1)?;
    xt.positions
        .iter()
        .zip(&x1.positions)
        .map(|(a, b)| target_field_clamped(a, b, t, clamp))
        .collect()
}

/// Projects a flattened ambient vector position by position.
pub fn product_tangent_project(x: &ProductPoint<SpherePoint>, w: &[f64]) -> Result<Vec<TangentVector>> {
    let width = x.dim() + 1;
    if w.len() != width * x.len() {
        return Err(Error::arg(format!(
            "ambient vector has {} entries, expected {}",
            w.len(),
            width * x.len()
        )));
    }
    x.positions
        .iter()
        .zip(w.chunks(width))
        .map(|(p, chunk)| tangent_project(p, chunk))
        .collect()
}

pub fn sample_product_prior<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<ProductPoint<SpherePoint>> {
    if k == 0 {
        return Err(Error::arg("sequence length must be at least 1"));
    }
    let positions = (0..k).map(|_| sample_uniform_prior(d, rng)).collect::<Result<Vec<_>>>()?;
    Ok(ProductPoint { positions })
}

/// Nearest vertex at every position.
pub fn decode_product(x: &ProductPoint<SpherePoint>) -> Vec<usize> {
    x.positions.iter().map(nearest_vertex).collect()
}
