//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop when the relative objective change falls below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            grad_tol: 1e-6,
            f_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns `None` (or non-finite values) outside its domain.
/// Returns `None` if the starting point is not evaluable.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut eval = |x: &[f64]| f(x).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()));
    let mut x = x0.to_vec();
    let (mut fx, mut g) = eval(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        } else {
            let scale = 1.0 / inf_norm(&g).max(1.0);
            for qi in &mut q {
                *qi *= scale;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((fn_, gn)) = eval(&xn) {
                if fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fn_).abs() / fx.abs().max(fn_.abs()).max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        converged = inf_norm(&g) <= opts.grad_tol || rel <= opts.f_tol;
    }
    Some(LbfgsResult {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let r = minimize(
            f,
            &[-1.2, 1.0],
            &LbfgsOptions {
                max_iter: 500,
                f_tol: 0.0,
                grad_tol: 1e-9,
                ..LbfgsOptions::default()
            },
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn quadratic_with_domain() {
        // minimum at 2 inside a domain x > 0
        let f = |x: &[f64]| (x[0] > 0.0).then(|| ((x[0] - 2.0).powi(2) - x[0].ln(), vec![2.0 * (x[0] - 2.0) - 1.0 / x[0]]));
        let r = minimize(f, &[0.1], &LbfgsOptions::default()).unwrap();
        let expect = (2.0 + (4.0f64 + 2.0).sqrt()) / 2.0;
        assert!((r.x[0] - expect).abs() < 1e-6);
        assert!(minimize(f, &[-1.0], &LbfgsOptions::default()).is_none());
    }
}
