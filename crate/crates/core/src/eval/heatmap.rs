//! Kernel density heatmaps on the 2-simplex and their SVG rendering.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Resolution of the sub-grid used to integrate a kernel over the triangle.
const QUADRATURE_GRID: usize = 96;

/// Cell values on the `r^2`-cell triangular grid, indexed like
/// [`tri_cell`](super::tri_cell).
#[derive(Debug, Clone, PartialEq)]
pub struct TriGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

/// Barycentric centroid and `(a, b)` lattice vertices of every cell.
fn cells(r: usize) -> Vec<([f64; 3], [[f64; 2]; 3])> {
    let rf = r as f64;
    let mut out = Vec::with_capacity(r * r);
    let mut push = |verts: [[f64; 2]; 3]| {
        let a = (verts[0][0] + verts[1][0] + verts[2][0]) / (3.0 * rf);
        let b = (verts[0][1] + verts[1][1] + verts[2][1]) / (3.0 * rf);
        out.push(([1.0 - a - b, a, b], verts));
    };
    for j in 0..r {
        for i in 0..r - j {
            let (x, y) = (i as f64, j as f64);
            push([[x, y], [x + 1.0, y], [x, y + 1.0]]);
        }
    }
    for j in 0..r.saturating_sub(1) {
        for i in 0..r - 1 - j {
            let (x, y) = (i as f64, j as f64);
            push([[x + 1.0, y], [x + 1.0, y + 1.0], [x, y + 1.0]]);
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel density of simplex points (row-major `n x 3`) evaluated
/// at the centroid of each cell, normalised to sum to 1.
///
/// Distances are Euclidean in barycentric coordinates. Each cell value is
/// divided by the kernel mass that falls inside the triangle, which removes
/// the dip a plain estimator shows along the edges.
pub fn density_heatmap(points: &[f64], resolution: usize, bandwidth: f64) -> Result<TriGrid> {
    if points.is_empty() || !points.len().is_multiple_of(3) {
        return Err(Error::arg("heatmap needs a non-empty set of 2-simplex points"));
    }
    if resolution == 0 || !(bandwidth > 0.0) {
        return Err(Error::arg("heatmap needs a positive resolution and bandwidth"));
    }
    for (i, p) in points.chunks(3).enumerate() {
        if p.iter().any(|&c| !(c >= -1e-9)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::arg(format!("point {i} is not on the 2-simplex")));
        }
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let cutoff = 81.0 * bandwidth * bandwidth;
    let quad: Vec<[f64; 3]> = cells(QUADRATURE_GRID).into_iter().map(|(c, _)| c).collect();
    let grid = cells(resolution);
    let mut values: Vec<f64> = grid
        .par_iter()
        .map(|(c, _)| {
            let kernel = |p: &[f64]| {
                let d = dist2(c, p);
                if d > cutoff {
                    0.0
                } else {
                    (-d * inv).exp()
                }
            };
            let raw: f64 = points.chunks(3).map(kernel).sum();
            // Equal-area sub-cells, so the mean kernel value is proportional to the inside mass.
            let mass: f64 = quad.iter().map(|q| kernel(q)).sum::<f64>() / quad.len() as f64;
            raw / mass
        })
        .collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(TriGrid { resolution, values })
}

/// Colour at `s` in `[0, 1]` on a linear ramp from pale yellow to dark blue.
fn ramp(s: f64) -> String {
    const LO: [f64; 3] = [255.0, 247.0, 188.0];
    const HI: [f64; 3] = [8.0, 29.0, 88.0];
    let s = s.clamp(0.0, 1.0);
    let c: Vec<u8> = (0..3).map(|i| (LO[i] + s * (HI[i] - LO[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// A self-contained SVG of `grid`: the triangle of cells with vertex labels
/// and a colour bar spanning the grid's value range.
pub fn render_svg(grid: &TriGrid, title: &str) -> String {
    let r = grid.resolution;
    let (side, left, top) = (400.0, 30.0, 50.0);
    let height = side * 3f64.sqrt() / 2.0;
    let to_px = |a: f64, b: f64| {
        let (a, b) = (a / r as f64, b / r as f64);
        (left + side * (a + b / 2.0), top + height * (1.0 - b))
    };
    let lo = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="560" height="{}" viewBox="0 0 560 {}">"#,
        top + height + 40.0,
        top + height + 40.0
    );
    let _ = writeln!(
        svg,
        r#"<defs><linearGradient id="bar" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        ramp(0.0),
        ramp(1.0)
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="25" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        left + side / 2.0,
        escape(title)
    );
    for ((_, verts), v) in cells(r).iter().zip(&grid.values) {
        let pts: Vec<String> = verts
            .iter()
            .map(|&[a, b]| {
                let (x, y) = to_px(a, b);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let fill = ramp((v - lo) / span);
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{fill}" stroke="{fill}" stroke-width="0.5"/>"#, pts.join(" "));
    }
    let corners = [to_px(0.0, 0.0), to_px(r as f64, 0.0), to_px(0.0, r as f64)];
    let outline: Vec<String> = corners.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(svg, r#"<polygon points="{}" fill="none" stroke="black"/>"#, outline.join(" "));
    for (label, (x, y), dy) in [("e0", corners[0], 18.0), ("e1", corners[1], 18.0), ("e2", corners[2], -8.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{label}</text>"#,
            y + dy
        );
    }
    let (bx, by, bh) = (left + side + 40.0, top, height);
    let _ = writeln!(svg, r#"<rect x="{bx}" y="{by}" width="18" height="{bh:.2}" fill="url(#bar)" stroke="black"/>"#);
    for (value, y) in [(hi, by + 4.0), (lo, by + bh)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y:.2}" font-family="sans-serif" font-size="11">{value:.2e}</text>"#,
            bx + 24.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
