use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::StandardNormal;

use super::FactorSpec;
use crate::error::{usage, Result};
use crate::math;
use crate::rng;

const SUBJECT_TAG: u64 = 0x5355_424a;
const GRID: usize = 4;
const FIELD_AMPLITUDE: f64 = 0.3;
const OVAL_INTENSITY: f64 = 0.45;
const GLYPH_INTENSITY: f64 = 0.8;
const MAX_PAN_DEG: f64 = 30.0;

/// Mouth curvature of expression `e`, evenly spaced in [-1, 1].
pub fn curvature(spec: &FactorSpec, expression: usize) -> f64 {
    -1.0 + 2.0 * expression as f64 / (spec.n_expressions - 1) as f64
}

/// Shear angle (radians) of pose class `p`, evenly spaced in [-30°, 30°].
pub fn pan_angle(spec: &FactorSpec, pose: usize) -> f64 {
    let deg = -MAX_PAN_DEG + 2.0 * MAX_PAN_DEG * pose as f64 / (spec.n_poses - 1) as f64;
    deg * PI / 180.0
}

/// Low-frequency identity field of a subject, already scaled to ±0.3.
pub fn subject_field(spec: &FactorSpec, subject: usize) -> Vec<f64> {
    let mut r = rng::stream(rng::derive(spec.seed, &[SUBJECT_TAG, subject as u64]));
    let mut grid = [0.0f64; GRID * GRID];
    for g in grid.iter_mut() {
        *g = r.sample(StandardNormal);
    }
    let peak = grid.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for g in grid.iter_mut() {
        *g *= FIELD_AMPLITUDE / peak;
    }
    let n = spec.side;
    let scale = (GRID - 1) as f64 / (n - 1) as f64;
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let gy = y as f64 * scale;
        let y0 = (gy as usize).min(GRID - 2);
        let fy = gy - y0 as f64;
        for x in 0..n {
            let gx = x as f64 * scale;
            let x0 = (gx as usize).min(GRID - 2);
            let fx = gx - x0 as f64;
            let at = |r: usize, c: usize| grid[r * GRID + c];
            out[y * n + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Fixed face-oval intensity mask with a soft rim.
pub fn oval_mask(side: usize) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let (rx, ry) = (0.38 * side as f64, 0.46 * side as f64);
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f64 - c) / rx;
            let dy = (y as f64 - c) / ry;
            let d = dx * dx + dy * dy;
            out[y * side + x] = OVAL_INTENSITY * ((1.15 - d) / 0.3).clamp(0.0, 1.0);
        }
    }
    out
}

fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (px - a.0 - t * vx, py - a.1 - t * vy);
    math::sqrt(dx * dx + dy * dy)
}

/// Unsheared glyph coverage in [0, 1]: a mouth parabola plus two eyebrows.
pub fn glyph_coverage(spec: &FactorSpec, expression: usize) -> Vec<f64> {
    let n = spec.side;
    let s = n as f64;
    let c = curvature(spec, expression);
    let cx = (s - 1.0) / 2.0;

    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    // mouth: corners rise for positive curvature
    let (mouth_y, half_w, depth) = (0.72 * s, 0.23 * s, 0.15 * s);
    let steps = 24;
    let mut prev = None;
    for i in 0..=steps {
        let u = -1.0 + 2.0 * i as f64 / steps as f64;
        let pt = (cx + u * half_w, mouth_y - c * depth * u * u);
        if let Some(p) = prev {
            segments.push((p, pt));
        }
        prev = Some(pt);
    }
    // eyebrows: slope c/2, mirrored about the vertical axis
    let (brow_y, brow_dx, brow_half) = (0.3 * s, 0.2 * s, 0.1 * s);
    let slope = c / 2.0;
    for side in [-1.0, 1.0] {
        let bx = cx + side * brow_dx;
        let dy = side * slope * brow_half;
        segments.push(((bx - brow_half, brow_y + dy), (bx + brow_half, brow_y - dy)));
    }

    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let d = segments
                .iter()
                .map(|&(a, b)| seg_dist(x as f64, y as f64, a, b))
                .fold(f64::INFINITY, f64::min);
            out[y * n + x] = (1.5 - d).clamp(0.0, 1.0);
        }
    }
    out
}

/// Horizontal shear `x' = x + tan(θ)(y - H/2)` with linear resampling along
/// rows; source positions outside the canvas read as 0.
pub fn shear(img: &[f64], side: usize, theta: f64) -> Vec<f64> {
    let t = math::tan(theta);
    let half = side as f64 / 2.0;
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        let shift = t * (y as f64 - half);
        for x in 0..side {
            let src = x as f64 - shift;
            let x0 = libm::floor(src);
            let f = src - x0;
            let read = |c: f64| {
                if c < 0.0 || c > (side - 1) as f64 {
                    0.0
                } else {
                    img[y * side + c as usize]
                }
            };
            out[y * side + x] = if f == 0.0 {
                read(x0)
            } else {
                (1.0 - f) * read(x0) + f * read(x0 + 1.0)
            };
        }
    }
    out
}

/// Renders one image as `side × side` row-major pixels in [0, 1].
pub fn render_sample(
    spec: &FactorSpec,
    subject: usize,
    expression: usize,
    pose: usize,
    noise_seed: u64,
) -> Result<Vec<f32>> {
    spec.validate()?;
    if subject >= spec.n_subjects || expression >= spec.n_expressions || pose >= spec.n_poses {
        return Err(usage(alloc::format!(
            "label ids out of range: subject {subject}, expression {expression}, pose {pose}"
        )));
    }
    let n = spec.side;
    let field = subject_field(spec, subject);
    let oval = oval_mask(n);
    let glyph = shear(&glyph_coverage(spec, expression), n, pan_angle(spec, pose));
    let mut noise = rng::stream(noise_seed);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n * n {
        let base = oval[i] + field[i];
        let a = glyph[i];
        let mut v = base * (1.0 - a) + GLYPH_INTENSITY * a;
        if spec.noise_sigma > 0.0 {
            let z: f64 = noise.sample(StandardNormal);
            v += spec.noise_sigma * z;
        }
        out.push(v.clamp(0.0, 1.0) as f32);
    }
    Ok(out)
}
