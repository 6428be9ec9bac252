//! Small numerically careful helpers shared by the scalarizations and losses.

/// Compensated (Neumaier) summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Max-shifted `log(sum(exp(x)))`. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + compensated_sum(xs.iter().map(|&x| (x - max).exp())).ln()
}

/// Softmax weights of `xs` together with the log normalizer.
/// Equal inputs give exactly uniform weights.
pub fn softmax_with_lse(xs: &[f64]) -> (Vec<f64>, f64) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (vec![f64::NAN; xs.len()], max);
    }
    let e: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total = compensated_sum(e.iter().copied());
    (e.iter().map(|v| v / total).collect(), max + total.ln())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    softmax_with_lse(xs).0
}

/// Numerically stable `log(sigmoid(x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Population variance (divides by `n`).
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    compensated_sum(xs.iter().map(|&x| (x - m) * (x - m))) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs = [1.0, 2.0, 3.0];
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-14);
        assert!((logsumexp(&xs) - 3.407_605_964_444_380).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_survives_huge_arguments() {
        let xs = [800.0, 800.0];
        assert!((logsumexp(&xs) - (800.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_sigmoid_tails() {
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!((-log_sigmoid(10.0) - 4.539_889_921_686_465e-5).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v), 1.0);
    }
}
