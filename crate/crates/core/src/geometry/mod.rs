//! Closed-form geometry of the probability simplex under the Fisher-Rao
//! metric and of the positive orthant of the unit sphere.
//!
//! The square-root map `p -> sqrt(p)` sends the simplex interior onto the
//! orthant `S^d_+` of the unit sphere. Fisher-Rao lengths are exactly twice
//! the great-circle lengths of the image, so every primitive on the simplex
//! can be obtained by mapping to the sphere, acting there and mapping back.
//! Both charts are implemented in closed form; the sphere chart is the one
//! used for training and sampling.
//!
//! Hot loops in the trainer and sampler operate on raw slices through
//! [`raw`]; the typed API below validates its inputs and is used everywhere
//! else.

mod product;
pub mod raw;
mod simplex;
mod sphere;

use crate::error::{Error, Result};

pub use product::{
    decode_product, product_distance, product_geodesic_interpolant, product_target_field,
    product_tangent_project, sample_product_prior, ProductPoint,
};
pub use simplex::{
    fisher_rao_distance, fisher_rao_inner, inverse_sphere_map, pullback, pushforward,
    simplex_exp, simplex_log, simplex_parallel_transport, simplex_tangent_project, smooth,
    sphere_map,
};
pub use sphere::{
    geodesic_interpolant, nearest_vertex, parallel_transport, sample_uniform_prior,
    sphere_distance, sphere_exp, sphere_log, tangent_project, target_field,
    target_field_clamped,
};
pub(crate) use sphere::fill_uniform_prior;

/// Tolerance used for the sum, norm and tangency invariants.
pub const INVARIANT_TOL: f64 = 1e-9;

/// Smallest coordinate a simplex point may have and still count as interior.
pub const INTERIOR_EPS: f64 = 1e-12;

/// How far below zero a coordinate may fall before a step counts as having
/// left the orthant.
pub const ORTHANT_SLACK: f64 = 1e-9;

/// Default clamp `delta_t` keeping `1 / (1 - t)` finite.
pub const DEFAULT_TIME_CLAMP: f64 = 1e-3;

/// Default label-smoothing strength applied to one-hot data.
pub const DEFAULT_SMOOTHING: f64 = 1e-2;

/// Coordinate system a point or tangent vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chart {
    Simplex,
    Sphere,
}

impl Chart {
    pub fn as_str(self) -> &'static str {
        match self {
            Chart::Simplex => "simplex",
            Chart::Sphere => "sphere",
        }
    }
}

impl std::str::FromStr for Chart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(Chart::Simplex),
            "sphere" => Ok(Chart::Sphere),
            other => Err(Error::arg(format!(
                "unknown chart '{other}' (expected simplex or sphere)"
            ))),
        }
    }
}

impl std::fmt::Display for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_finite(coords: &[f64], what: &str) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} has non-finite coordinates")))
    }
}

/// A categorical distribution over `d + 1` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::arg("simplex point needs at least two coordinates"));
        }
        check_finite(&coords, "simplex point")?;
        if let Some(c) = coords.iter().find(|&&c| c < 0.0) {
            return Err(Error::arg(format!("negative probability {c}")));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > INVARIANT_TOL {
            return Err(Error::arg(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(SimplexPoint { coords })
    }

    pub(crate) fn new_unchecked(coords: Vec<f64>) -> Self {
        SimplexPoint { coords }
    }

    /// Vertex `e_index` of the `d`-simplex.
    pub fn vertex(d: usize, index: usize) -> Result<Self> {
        if index > d {
            return Err(Error::arg(format!("vertex {index} out of range for d = {d}")));
        }
        let mut coords = vec![0.0; d + 1];
        coords[index] = 1.0;
        Self::new(coords)
    }

    pub fn uniform(d: usize) -> Self {
        SimplexPoint { coords: vec![1.0 / (d + 1) as f64; d + 1] }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Intrinsic dimension `d`.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn is_interior(&self) -> bool {
        self.is_interior_with(INTERIOR_EPS)
    }

    pub fn is_interior_with(&self, eps: f64) -> bool {
        self.coords.iter().all(|&c| c >= eps)
    }
}

/// A point on the positive orthant of the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::arg("sphere point needs at least two coordinates"));
        }
        check_finite(&coords, "sphere point")?;
        if let Some(c) = coords.iter().find(|&&c| c < 0.0) {
            return Err(Error::arg(format!("coordinate {c} outside the positive orthant")));
        }
        let norm = raw::norm(&coords);
        if (norm - 1.0).abs() > INVARIANT_TOL {
            return Err(Error::arg(format!("sphere point has norm {norm}, not 1")));
        }
        Ok(SpherePoint { coords })
    }

    /// Projects an arbitrary non-zero vector onto the orthant: negative
    /// coordinates are clipped to zero and the result is normalised.
    pub fn project(mut coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords, "vector")?;
        if !raw::clip_and_normalize(&mut coords) {
            return Err(Error::NumericalDomain(
                "cannot project a vector with no positive coordinate onto the orthant".into(),
            ));
        }
        Ok(SpherePoint { coords })
    }

    pub(crate) fn new_unchecked(coords: Vec<f64>) -> Self {
        SpherePoint { coords }
    }

    pub fn vertex(d: usize, index: usize) -> Result<Self> {
        Ok(sphere_map(&SimplexPoint::vertex(d, index)?))
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }
}

/// A tangent vector together with the point it is attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    chart: Chart,
    base: Vec<f64>,
    components: Vec<f64>,
}

impl TangentVector {
    /// Tangent vector at a sphere point; must be orthogonal to the base.
    pub fn at_sphere(base: &SpherePoint, components: Vec<f64>) -> Result<Self> {
        check_len(base.coords(), &components)?;
        check_finite(&components, "tangent vector")?;
        let inner = raw::dot(base.coords(), &components);
        if inner.abs() > INVARIANT_TOL * (1.0 + raw::norm(&components)) {
            return Err(Error::arg(format!(
                "vector is not tangent to the sphere: <x, v> = {inner:e}"
            )));
        }
        Ok(TangentVector { chart: Chart::Sphere, base: base.coords().to_vec(), components })
    }

    /// Tangent vector at a simplex point; components must sum to zero.
    pub fn at_simplex(base: &SimplexPoint, components: Vec<f64>) -> Result<Self> {
        check_len(base.coords(), &components)?;
        check_finite(&components, "tangent vector")?;
        let sum: f64 = components.iter().sum();
        if sum.abs() > INVARIANT_TOL * (1.0 + raw::norm(&components)) {
            return Err(Error::arg(format!(
                "vector is not tangent to the simplex: components sum to {sum:e}"
            )));
        }
        Ok(TangentVector { chart: Chart::Simplex, base: base.coords().to_vec(), components })
    }

    pub fn zero_sphere(base: &SpherePoint) -> Self {
        let n = base.coords().len();
        TangentVector { chart: Chart::Sphere, base: base.coords().to_vec(), components: vec![0.0; n] }
    }

    pub fn zero_simplex(base: &SimplexPoint) -> Self {
        let n = base.coords().len();
        TangentVector { chart: Chart::Simplex, base: base.coords().to_vec(), components: vec![0.0; n] }
    }

    pub(crate) fn new_unchecked(chart: Chart, base: &[f64], components: Vec<f64>) -> Self {
        TangentVector { chart, base: base.to_vec(), components }
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }

    /// Euclidean norm of the components (the Riemannian norm in the sphere chart).
    pub fn euclidean_norm(&self) -> f64 {
        raw::norm(&self.components)
    }

    /// Same vector scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        TangentVector {
            chart: self.chart,
            base: self.base.clone(),
            components: self.components.iter().map(|c| c * factor).collect(),
        }
    }

    pub(crate) fn expect_chart(&self, chart: Chart) -> Result<()> {
        if self.chart == chart {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "expected a {chart}-chart tangent vector, got {}",
                self.chart
            )))
        }
    }

    pub(crate) fn expect_base(&self, base: &[f64]) -> Result<()> {
        let close = self.base.len() == base.len()
            && self.base.iter().zip(base).all(|(a, b)| (a - b).abs() <= INVARIANT_TOL);
        if close {
            Ok(())
        } else {
            Err(Error::arg("tangent vector is attached to a different base point"))
        }
    }
}

fn check_len(base: &[f64], components: &[f64]) -> Result<()> {
    if base.len() != components.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: base has {} coordinates, vector has {}",
            base.len(),
            components.len()
        )));
    }
    Ok(())
}

pub(crate) fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    check_len(a, b)
}
