use rand::Rng;
use rand_distr::StandardNormal;

use super::{raw, same_len, Chart, SpherePoint, TangentVector, DEFAULT_TIME_CLAMP, ORTHANT_SLACK};
use crate::error::{Error, Result};

/// Great-circle distance `arccos <a, b>`, in `[0, pi/2]` on the orthant.
pub fn sphere_distance(a: &SpherePoint, b: &SpherePoint) -> f64 {
    raw::dot(a.coords(), b.coords()).clamp(-1.0, 1.0).acos()
}

/// Exponential map on the unit sphere.
///
/// Fails with [`Error::OrthantExit`] if the endpoint has a coordinate below
/// `-ORTHANT_SLACK`; coordinates inside the slack are clipped to zero.
pub fn sphere_exp(x: &SpherePoint, v: &TangentVector) -> Result<SpherePoint> {
    v.expect_chart(Chart::Sphere)?;
    same_len(x.coords(), v.components())?;
    if v.euclidean_norm() >= std::f64::consts::PI {
        return Err(Error::arg("tangent vector norm must be below pi"));
    }
    let mut out = vec![0.0; x.coords().len()];
    raw::exp_into(x.coords(), v.components(), &mut out);
    finish_on_orthant(out)
}

pub(super) fn finish_on_orthant(mut out: Vec<f64>) -> Result<SpherePoint> {
    if let Some((index, &value)) =
        out.iter().enumerate().find(|(_, &c)| c < -ORTHANT_SLACK)
    {
        return Err(Error::OrthantExit { index, value });
    }
    for c in out.iter_mut() {
        if *c < 0.0 {
            *c = 0.0;
        }
    }
    Ok(SpherePoint::new_unchecked(out))
}

/// Logarithm map: the tangent vector at `x` pointing along the geodesic to
/// `y` with length equal to their distance.
pub fn sphere_log(x: &SpherePoint, y: &SpherePoint) -> Result<TangentVector> {
    same_len(x.coords(), y.coords())?;
    let mut out = vec![0.0; x.coords().len()];
    raw::log_into(x.coords(), y.coords(), &mut out);
    Ok(TangentVector::new_unchecked(Chart::Sphere, x.coords(), out))
}

/// Parallel transport of `v` from `x` to `y` along the connecting geodesic.
pub fn parallel_transport(x: &SpherePoint, y: &SpherePoint, v: &TangentVector) -> Result<TangentVector> {
    v.expect_chart(Chart::Sphere)?;
    same_len(x.coords(), y.coords())?;
    same_len(x.coords(), v.components())?;
    let mut dir = vec![0.0; x.coords().len()];
    let theta = raw::direction_into(x.coords(), y.coords(), &mut dir);
    let mut out = v.components().to_vec();
    if x.coords() != y.coords() && theta != 0.0 {
        // Only the component along the geodesic direction rotates, within
        // the plane spanned by x and that direction.
        let along = raw::dot(&dir, v.components());
        let (s, c) = theta.sin_cos();
        for ((o, d), xi) in out.iter_mut().zip(&dir).zip(x.coords()) {
            *o += (c - 1.0) * along * d - s * along * xi;
        }
    }
    Ok(TangentVector::new_unchecked(Chart::Sphere, y.coords(), out))
}

/// `exp_{x0}(t log_{x0}(x1))` for `t` in `[0, 1]`.
pub fn geodesic_interpolant(x0: &SpherePoint, x1: &SpherePoint, t: f64) -> Result<SpherePoint> {
    same_len(x0.coords(), x1.coords())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg(format!("interpolation time {t} outside [0, 1]")));
    }
    let mut out = vec![0.0; x0.coords().len()];
    raw::geodesic_into(x0.coords(), x1.coords(), t, &mut out);
    finish_on_orthant(out)
}

/// Conditional target field `log_{xt}(x1) / (1 - t)` with the default clamp.
pub fn target_field(xt: &SpherePoint, x1: &SpherePoint, t: f64) -> Result<TangentVector> {
    target_field_clamped(xt, x1, t, DEFAULT_TIME_CLAMP)
}

/// Conditional target field; times above `1 - clamp` are evaluated at `1 - clamp`.
pub fn target_field_clamped(
    xt: &SpherePoint,
    x1: &SpherePoint,
    t: f64,
    clamp: f64,
) -> Result<TangentVector> {
    same_len(xt.coords(), x1.coords())?;
    if !(clamp > 0.0 && clamp < 1.0) {
        return Err(Error::arg(format!("time clamp {clamp} outside (0, 1)")));
    }
    if !(t >= 0.0) {
        return Err(Error::arg(format!("time {t} is negative")));
    }
    let t = t.min(1.0 - clamp);
    let mut out = vec![0.0; xt.coords().len()];
    raw::target_into(xt.coords(), x1.coords(), t, &mut out);
    Ok(TangentVector::new_unchecked(Chart::Sphere, xt.coords(), out))
}

/// Orthogonal projection of an ambient vector onto the tangent space at `x`.
pub fn tangent_project(x: &SpherePoint, w: &[f64]) -> Result<TangentVector> {
    same_len(x.coords(), w)?;
    let mut out = w.to_vec();
    raw::project_tangent(x.coords(), &mut out);
    Ok(TangentVector::new_unchecked(Chart::Sphere, x.coords(), out))
}

/// Uniform sample on `S^d_+`: absolute values of a standard Gaussian, normalised.
pub fn sample_uniform_prior<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SpherePoint> {
    if d < 1 {
        return Err(Error::arg("prior dimension must be at least 1"));
    }
    let mut coords = vec![0.0; d + 1];
    fill_uniform_prior(&mut coords, rng);
    Ok(SpherePoint::new_unchecked(coords))
}

pub(crate) fn fill_uniform_prior<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    loop {
        for c in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *c = g.abs();
        }
        let n = raw::norm(out);
        if n > 0.0 {
            out.iter_mut().for_each(|c| *c /= n);
            return;
        }
    }
}

/// Index of the closest vertex, i.e. of the largest coordinate (lowest index on ties).
pub fn nearest_vertex(x: &SpherePoint) -> usize {
    raw::argmax(x.coords())
}
