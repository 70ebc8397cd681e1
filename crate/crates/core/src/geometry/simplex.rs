use super::{
    parallel_transport, raw, same_len, Chart, SimplexPoint, SpherePoint, TangentVector,
    INTERIOR_EPS, ORTHANT_SLACK,
};
use crate::error::{Error, Result};

/// Square-root map from the simplex onto the orthant of the unit sphere.
pub fn sphere_map(p: &SimplexPoint) -> SpherePoint {
    SpherePoint::new_unchecked(p.coords().iter().map(|c| c.sqrt()).collect())
}

/// Inverse of [`sphere_map`]: coordinate-wise squares.
pub fn inverse_sphere_map(s: &SpherePoint) -> SimplexPoint {
    SimplexPoint::new_unchecked(s.coords().iter().map(|c| c * c).collect())
}

/// Label smoothing `(1 - eps) p + eps * uniform`, which moves `p` into the interior.
pub fn smooth(p: &SimplexPoint, eps: f64) -> Result<SimplexPoint> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::arg(format!("smoothing {eps} outside (0, 1)")));
    }
    let floor = eps / p.coords().len() as f64;
    Ok(SimplexPoint::new_unchecked(
        p.coords().iter().map(|c| (1.0 - eps) * c + floor).collect(),
    ))
}

fn require_interior(p: &SimplexPoint) -> Result<()> {
    match p.coords().iter().enumerate().find(|(_, &c)| c < INTERIOR_EPS) {
        Some((i, c)) => Err(Error::NumericalDomain(format!(
            "probability {c:e} at index {i} is below the interior threshold; smooth the point first"
        ))),
        None => Ok(()),
    }
}

fn simplex_tangent(p: &SimplexPoint, v: &TangentVector) -> Result<()> {
    v.expect_chart(Chart::Simplex)?;
    same_len(p.coords(), v.components())
}

/// Fisher-Rao inner product `sum_i u_i v_i / p_i` at an interior point.
pub fn fisher_rao_inner(p: &SimplexPoint, u: &TangentVector, v: &TangentVector) -> Result<f64> {
    require_interior(p)?;
    simplex_tangent(p, u)?;
    simplex_tangent(p, v)?;
    Ok(p.coords()
        .iter()
        .zip(u.components())
        .zip(v.components())
        .map(|((pi, ui), vi)| ui * vi / pi)
        .sum())
}

/// Fisher-Rao geodesic distance, twice the great-circle distance of the images.
pub fn fisher_rao_distance(p: &SimplexPoint, q: &SimplexPoint) -> Result<f64> {
    same_len(p.coords(), q.coords())?;
    let c: f64 = p.coords().iter().zip(q.coords()).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(2.0 * c.clamp(-1.0, 1.0).acos())
}

/// Differential of the sphere map at `p`: `v_i / (2 sqrt(p_i))`.
pub fn pushforward(p: &SimplexPoint, v: &TangentVector) -> Result<TangentVector> {
    require_interior(p)?;
    simplex_tangent(p, v)?;
    let s = sphere_map(p);
    let comps = p
        .coords()
        .iter()
        .zip(v.components())
        .map(|(pi, vi)| vi / (2.0 * pi.sqrt()))
        .collect();
    Ok(TangentVector::new_unchecked(Chart::Sphere, s.coords(), comps))
}

/// Inverse of [`pushforward`]: a sphere tangent at `s` back to the simplex, `2 s_i w_i`.
pub fn pullback(s: &SpherePoint, w: &TangentVector) -> Result<TangentVector> {
    w.expect_chart(Chart::Sphere)?;
    same_len(s.coords(), w.components())?;
    let p = inverse_sphere_map(s);
    let comps = s.coords().iter().zip(w.components()).map(|(si, wi)| 2.0 * si * wi).collect();
    Ok(TangentVector::new_unchecked(Chart::Simplex, p.coords(), comps))
}

/// Exponential map of the Fisher-Rao metric in simplex coordinates.
///
/// With `w = v / sqrt(p)` and `n = |w|`:
///
/// `exp_p(v) = (p + w^2/n^2)/2 + (p - w^2/n^2) cos(n)/2 + sqrt(p) w/n sin(n)`
///
/// which is the square of the great-circle point `cos(n/2) sqrt(p) + sin(n/2) w/n`.
pub fn simplex_exp(p: &SimplexPoint, v: &TangentVector) -> Result<SimplexPoint> {
    require_interior(p)?;
    simplex_tangent(p, v)?;
    let w: Vec<f64> = p.coords().iter().zip(v.components()).map(|(pi, vi)| vi / pi.sqrt()).collect();
    let n = raw::norm(&w);
    if n == 0.0 {
        return Ok(p.clone());
    }
    if n >= 2.0 * std::f64::consts::PI {
        return Err(Error::arg("tangent vector Fisher-Rao norm must be below 2 pi"));
    }
    let (s, c) = n.sin_cos();
    let (s_half, c_half) = (0.5 * n).sin_cos();
    let mut out = Vec::with_capacity(w.len());
    for (index, (pi, wi)) in p.coords().iter().zip(&w).enumerate() {
        let dir = wi / n;
        let root = c_half * pi.sqrt() + s_half * dir;
        if root < -ORTHANT_SLACK {
            return Err(Error::OrthantExit { index, value: root });
        }
        let sq = dir * dir;
        let q = 0.5 * (pi + sq) + 0.5 * (pi - sq) * c + pi.sqrt() * dir * s;
        out.push(q.max(0.0));
    }
    Ok(SimplexPoint::new_unchecked(out))
}

/// Logarithm map of the Fisher-Rao metric in simplex coordinates:
///
/// `log_p(q) = d(p, q) / sqrt(1 - c^2) * (sqrt(p q) - c p)`, `c = <sqrt p, sqrt q>`.
///
/// `sqrt(1 - c^2)` is evaluated as `|sqrt q - c sqrt p|`, its exact value for
/// unit vectors, which keeps the ratio accurate when `p` and `q` are close.
pub fn simplex_log(p: &SimplexPoint, q: &SimplexPoint) -> Result<TangentVector> {
    require_interior(p)?;
    require_interior(q)?;
    same_len(p.coords(), q.coords())?;
    let sp: Vec<f64> = p.coords().iter().map(|c| c.sqrt()).collect();
    let sq: Vec<f64> = q.coords().iter().map(|c| c.sqrt()).collect();
    let c = raw::dot(&sp, &sq).clamp(-1.0, 1.0);
    let sine = sp.iter().zip(&sq).map(|(a, b)| (b - c * a).powi(2)).sum::<f64>().sqrt();
    if sine == 0.0 {
        return Ok(TangentVector::zero_simplex(p));
    }
    let dist = 2.0 * sine.atan2(c);
    let scale = dist / sine;
    let comps = sp
        .iter()
        .zip(&sq)
        .zip(p.coords())
        .map(|((a, b), pi)| scale * (a * b - c * pi))
        .collect();
    Ok(TangentVector::new_unchecked(Chart::Simplex, p.coords(), comps))
}

/// Parallel transport on the simplex, done on the sphere and pulled back.
pub fn simplex_parallel_transport(
    p: &SimplexPoint,
    q: &SimplexPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    let (sp, sq) = (sphere_map(p), sphere_map(q));
    let moved = parallel_transport(&sp, &sq, &pushforward(p, v)?)?;
    pullback(&sq, &moved)
}

/// Fisher-Rao orthogonal projection onto the simplex tangent space:
/// `w - (sum_i w_i) p`. The normal direction of `sum_i v_i = 0` under the
/// metric `diag(1/p)` is `p` itself.
pub fn simplex_tangent_project(p: &SimplexPoint, w: &[f64]) -> Result<TangentVector> {
    same_len(p.coords(), w)?;
    let total: f64 = w.iter().sum();
    let comps = w.iter().zip(p.coords()).map(|(wi, pi)| wi - total * pi).collect();
    Ok(TangentVector::new_unchecked(Chart::Simplex, p.coords(), comps))
}
