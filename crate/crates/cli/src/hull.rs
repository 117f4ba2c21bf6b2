//! Interpolation/extrapolation classification in `(T, ln P_r)`.

use icvi_core::process::OperatingCondition;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Interpolation,
    Extrapolation,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Interpolation => "interpolation",
            Regime::Extrapolation => "extrapolation",
        }
    }
}

const TOL: f64 = 1e-9;

/// Temperature in hundreds of kelvin so both axes are order one.
fn point(c: &OperatingCondition) -> (f64, f64) {
    (
        c.temperature / 100.0,
        c.partial_pressure.max(f64::MIN_POSITIVE).ln(),
    )
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
fn hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < TOL && (a.1 - b.1).abs() < TOL);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= TOL {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= TOL {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    if cross(a, b, p).abs() > TOL * len.max(1.0) {
        return false;
    }
    let t = ((p.0 - a.0) * (b.0 - a.0) + (p.1 - a.1) * (b.1 - a.1)) / (len * len);
    (-TOL..=1.0 + TOL).contains(&t)
}

/// Interpolation when `query` lies in the convex hull of the training
/// conditions (boundary included), extrapolation otherwise.
pub fn classify(training: &[OperatingCondition], query: &OperatingCondition) -> Regime {
    let h = hull(training.iter().map(point).collect());
    let p = point(query);
    let inside = match h.len() {
        0 => false,
        1 => (h[0].0 - p.0).abs() < TOL && (h[0].1 - p.1).abs() < TOL,
        2 => on_segment(h[0], h[1], p),
        _ => (0..h.len()).all(|k| cross(h[k], h[(k + 1) % h.len()], p) >= -TOL),
    };
    if inside {
        Regime::Interpolation
    } else {
        Regime::Extrapolation
    }
}
