//! Browser bindings for the scalarization demo. Points travel as flat
//! `[x0, y0, x1, y1, ...]` arrays.

use tcheby::evaluate::{hypervolume, pareto_indices};
use tcheby::scalarize::{hard_tcheby, st_from_rho};
use tcheby::synth::gen_concave_front;
use tcheby::PreferenceVector;
use wasm_bindgen::prelude::*;

fn pairs(flat: &[f64]) -> Vec<Vec<f64>> {
    flat.chunks_exact(2).map(<[f64]>::to_vec).collect()
}

fn lambda(l1: f64) -> PreferenceVector {
    PreferenceVector::new(vec![l1.clamp(0.0, 1.0), 1.0 - l1.clamp(0.0, 1.0)]).unwrap_or_else(|_| PreferenceVector::uniform(2))
}

/// `n` points on the concave front `(cos^3 t, sin^3 t)`.
#[wasm_bindgen]
pub fn concave_front(n: usize) -> Vec<f64> {
    gen_concave_front(n.max(3)).map(|p| p.concat()).unwrap_or_default()
}

/// Scalarized value of `(x, y)`. `method` is `linear`, `tcheby` or `smooth`.
#[wasm_bindgen]
pub fn scalarize(x: f64, y: f64, l1: f64, method: &str, gamma: f64, tau: f64) -> f64 {
    let lam = lambda(l1);
    let p = [x, y];
    match method {
        "linear" => lam.weights()[0] * x + lam.weights()[1] * y,
        "tcheby" => hard_tcheby(&p, &lam),
        _ => st_from_rho(&p, &lam, gamma.max(1e-6), tau.max(1e-6)),
    }
}

/// Index of the point maximizing the scalarization, or -1 for no points.
#[wasm_bindgen]
pub fn argmax(points: &[f64], l1: f64, method: &str, gamma: f64, tau: f64) -> i32 {
    let mut best = (-1, f64::NEG_INFINITY);
    for (i, p) in pairs(points).iter().enumerate() {
        let v = scalarize(p[0], p[1], l1, method, gamma, tau);
        if v > best.1 {
            best = (i as i32, v);
        }
    }
    best.0
}

/// Scalarized values on an `nx` by `ny` grid over `[x0, x1] x [y0, y1]`, row-major from `y0`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn value_grid(l1: f64, method: &str, gamma: f64, tau: f64, nx: usize, ny: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<f64> {
    let step = |a: f64, b: f64, n: usize, i: usize| if n > 1 { a + (b - a) * i as f64 / (n - 1) as f64 } else { a };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = step(y0, y1, ny, j);
        for i in 0..nx {
            out.push(scalarize(step(x0, x1, nx, i), y, l1, method, gamma, tau));
        }
    }
    out
}

/// Indices of the non-dominated points (maximization).
#[wasm_bindgen]
pub fn pareto(points: &[f64]) -> Vec<u32> {
    pareto_indices(&pairs(points)).into_iter().map(|i| i as u32).collect()
}

/// Exact hypervolume dominated by the points relative to `(rx, ry)`.
#[wasm_bindgen]
pub fn hypervolume_2d(points: &[f64], rx: f64, ry: f64) -> f64 {
    let pts = pairs(points);
    if pts.is_empty() {
        return 0.0;
    }
    hypervolume(&pts, &[rx, ry]).unwrap_or(f64::NAN)
}
