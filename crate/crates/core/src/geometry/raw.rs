//! Allocation-free sphere-chart kernels on coordinate slices.
//!
//! These do no validation. All slices passed to one call must have the same
//! length; points are assumed to be unit vectors.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Clips negative coordinates to zero and rescales to unit norm.
/// Returns `false` (leaving `x` clipped but unnormalised) if nothing positive remains.
pub fn clip_and_normalize(x: &mut [f64]) -> bool {
    for c in x.iter_mut() {
        if *c < 0.0 {
            *c = 0.0;
        }
    }
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for c in x.iter_mut() {
        *c /= n;
    }
    true
}

/// Removes the component of `w` along the unit vector `x`.
#[inline]
pub fn project_tangent(x: &[f64], w: &mut [f64]) {
    let inner = dot(x, w);
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi -= inner * xi;
    }
}

/// Great-circle exponential `cos|v| x + sin|v| v/|v|` written into `out`.
/// Returns the smallest output coordinate so callers can detect orthant exits.
pub fn exp_into(x: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
    let n = norm(v);
    if n == 0.0 {
        out.copy_from_slice(x);
    } else {
        let (s, c) = n.sin_cos();
        let k = s / n;
        for ((o, xi), vi) in out.iter_mut().zip(x).zip(v) {
            *o = c * xi + k * vi;
        }
    }
    out.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Angle between two unit vectors and the unit direction from `x` toward `y`
/// (written into `dir`). The angle is computed as `atan2(|y - cx|, c)`, which
/// stays accurate for nearly coincident points where `acos` loses half its
/// digits. Returns `0` and a zero direction when the points coincide.
pub fn direction_into(x: &[f64], y: &[f64], dir: &mut [f64]) -> f64 {
    let c = dot(x, y).clamp(-1.0, 1.0);
    for ((d, xi), yi) in dir.iter_mut().zip(x).zip(y) {
        *d = yi - c * xi;
    }
    let s = norm(dir);
    if s == 0.0 {
        dir.iter_mut().for_each(|d| *d = 0.0);
        return 0.0;
    }
    for d in dir.iter_mut() {
        *d /= s;
    }
    s.atan2(c)
}

/// Logarithm map `log_x(y)` written into `out`.
pub fn log_into(x: &[f64], y: &[f64], out: &mut [f64]) {
    let theta = direction_into(x, y, out);
    for o in out.iter_mut() {
        *o *= theta;
    }
}

/// Point at fraction `t` along the geodesic from `x0` to `x1`.
pub fn geodesic_into(x0: &[f64], x1: &[f64], t: f64, out: &mut [f64]) {
    let mut dir = vec![0.0; x0.len()];
    geodesic_with_scratch(x0, x1, t, out, &mut dir);
}

/// As [`geodesic_into`] with caller-provided scratch of the same length.
pub fn geodesic_with_scratch(x0: &[f64], x1: &[f64], t: f64, out: &mut [f64], dir: &mut [f64]) {
    let theta = direction_into(x0, x1, dir);
    let (s, c) = (t * theta).sin_cos();
    for ((o, a), d) in out.iter_mut().zip(x0).zip(dir.iter()) {
        *o = c * a + s * d;
    }
}

/// Conditional target field `log_{xt}(x1) / (1 - t)`; `t` must already be clamped.
pub fn target_into(xt: &[f64], x1: &[f64], t: f64, out: &mut [f64]) {
    log_into(xt, x1, out);
    let scale = 1.0 / (1.0 - t);
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Index of the largest coordinate, lowest index on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}
