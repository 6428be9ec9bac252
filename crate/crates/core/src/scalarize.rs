//! Reward scalarizations: linear, smooth Tchebysheff-like z-score (STZ),
//! hard Tchebysheff, and the smooth Tchebysheff rewards built on
//! distribution-relative rewards, in policy-independent and policy-dependent
//! form.
//!
//! The smooth Tchebysheff exponents `lambda_i * rho_i / (gamma * tau)` reach
//! several hundred at the default temperatures, so every log-sum-exp here is
//! max-shifted with compensated accumulation.

use serde::{Deserialize, Serialize};

use crate::config::PreferenceVector;
use crate::dataset::RewardDataset;
use crate::error::{invalid, Result};
use crate::numeric::{compensated_sum, logsumexp, softmax_with_lse};
use crate::stats::RewardStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Linear,
    Stz,
    HardTcheby,
    St,
    StPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarizedReward {
    pub value: f64,
    pub method: Method,
    pub lambda: Vec<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
}

impl ScalarizedReward {
    fn new(value: f64, method: Method, lambda: &PreferenceVector) -> Self {
        Self {
            value,
            method,
            lambda: lambda.weights().to_vec(),
            tau: None,
            gamma: None,
        }
    }

    fn with_temperatures(mut self, gamma: f64, tau: f64) -> Self {
        self.gamma = Some(gamma);
        self.tau = Some(tau);
        self
    }
}

/// Distribution-relative reward `rho_i = r_i / sigma_i - gamma * log Z_i(x_m)`.
pub fn rho(r: &[f64], group: usize, stats: &RewardStats) -> Result<Vec<f64>> {
    let lz = stats
        .log_partition
        .get(group)
        .ok_or_else(|| invalid(format!("group index {group} out of range ({} groups)", stats.log_partition.len())))?;
    check_len(r, stats.k())?;
    Ok(rho_with(r, lz, stats))
}

fn rho_with(r: &[f64], log_partition: &[f64], stats: &RewardStats) -> Vec<f64> {
    r.iter()
        .zip(&stats.sigma)
        .zip(log_partition)
        .map(|((&ri, &si), &lz)| ri / si - stats.gamma * lz)
        .collect()
}

/// `rho` for sequences outside the training set, possibly in unseen contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct NovelRho {
    pub values: Vec<f64>,
    /// The context was not in the training set; the mean log-partition was used.
    pub unseen_context: bool,
    /// Some `rho_i > 0`, i.e. the reward exceeds the observed distribution.
    pub above_observed: bool,
}

pub fn rho_novel(r: &[f64], context_id: &str, stats: &RewardStats) -> Result<NovelRho> {
    check_len(r, stats.k())?;
    let (values, unseen_context) = match stats.group_index(context_id) {
        Some(g) => (rho_with(r, &stats.log_partition[g], stats), false),
        None => (rho_with(r, &stats.mean_log_partition(), stats), true),
    };
    let above_observed = values.iter().any(|&v| v > 0.0);
    Ok(NovelRho {
        values,
        unseen_context,
        above_observed,
    })
}

fn check_len(r: &[f64], k: usize) -> Result<()> {
    if r.len() != k {
        return Err(invalid(format!("reward vector of length {}, expected {k}", r.len())));
    }
    Ok(())
}

/// `sum_i lambda_i r_i / sigma_i`.
pub fn linear_scalarize(r: &[f64], lambda: &PreferenceVector, stats: &RewardStats) -> ScalarizedReward {
    let value = compensated_sum(
        r.iter()
            .zip(lambda.weights())
            .zip(&stats.sigma)
            .map(|((&ri, &li), &si)| li * ri / si),
    );
    ScalarizedReward::new(value, Method::Linear, lambda)
}

/// `-log sum_i lambda_i exp(-(r_i - mu_i) / sigma_i)`.
pub fn stz_scalarize(r: &[f64], lambda: &PreferenceVector, stats: &RewardStats) -> ScalarizedReward {
    let terms: Vec<f64> = r
        .iter()
        .zip(lambda.weights())
        .zip(stats.sigma.iter().zip(&stats.mu))
        .map(|((&ri, &li), (&si, &mi))| li.ln() - (ri - mi) / si)
        .collect();
    ScalarizedReward::new(-logsumexp(&terms), Method::Stz, lambda)
}

/// `min_i lambda_i rho_i`, the tau -> 0 limit of `lambda_min * R_ST`.
pub fn hard_tcheby(rho: &[f64], lambda: &PreferenceVector) -> f64 {
    rho.iter()
        .zip(lambda.weights())
        .map(|(&p, &l)| l * p)
        .fold(f64::INFINITY, f64::min)
}

fn check_temperatures(gamma: f64, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("tau must be > 0, got {tau}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Exponents `((lambda_i - lambda_min) / tau) * log_pi - lambda_i * rho_i / (gamma * tau)`.
fn st_exponents(rho: &[f64], log_pi: f64, lambda: &PreferenceVector, gamma: f64, tau: f64) -> Vec<f64> {
    let lmin = lambda.min();
    rho.iter()
        .zip(lambda.weights())
        .map(|(&p, &l)| ((l - lmin) / tau) * log_pi - (l * p) / (gamma * tau))
        .collect()
}

/// Policy-dependent smooth Tchebysheff reward and its derivative with respect
/// to `log_pi`, evaluated on precomputed `rho`.
pub fn st_policy_from_rho(rho: &[f64], log_pi: f64, lambda: &PreferenceVector, gamma: f64, tau: f64) -> (f64, f64) {
    let lmin = lambda.min();
    let exps = st_exponents(rho, log_pi, lambda, gamma, tau);
    let (w, lse) = softmax_with_lse(&exps);
    let value = -(gamma * tau / lmin) * lse;
    // d/dlog_pi = -(gamma / lambda_min) * sum_i w_i (lambda_i - lambda_min)
    let slope = -(gamma / lmin)
        * compensated_sum(w.iter().zip(lambda.weights()).map(|(&wi, &li)| wi * (li - lmin)));
    (value, slope)
}

/// Policy-independent smooth Tchebysheff reward on precomputed `rho`.
pub fn st_from_rho(rho: &[f64], lambda: &PreferenceVector, gamma: f64, tau: f64) -> f64 {
    st_policy_from_rho(rho, 0.0, lambda, gamma, tau).0
}

/// `R_ST = -(gamma * tau / lambda_min) * logsumexp_i(-lambda_i rho_i / (gamma * tau))`.
pub fn st_scalarize(
    r: &[f64],
    group: usize,
    lambda: &PreferenceVector,
    stats: &RewardStats,
    gamma: f64,
    tau: f64,
) -> Result<ScalarizedReward> {
    check_temperatures(gamma, tau)?;
    let p = rho(r, group, stats)?;
    let value = st_from_rho(&p, lambda, gamma, tau);
    Ok(ScalarizedReward::new(value, Method::St, lambda).with_temperatures(gamma, tau))
}

/// Policy-dependent reward: the exponents gain `((lambda_i - lambda_min) / tau) * log pi(y|x)`.
pub fn st_scalarize_policy(
    r: &[f64],
    group: usize,
    log_pi: f64,
    lambda: &PreferenceVector,
    stats: &RewardStats,
    gamma: f64,
    tau: f64,
) -> Result<ScalarizedReward> {
    check_temperatures(gamma, tau)?;
    if !(log_pi <= 0.0) {
        return Err(invalid(format!("log_pi must be <= 0, got {log_pi}")));
    }
    let p = rho(r, group, stats)?;
    let (value, _) = st_policy_from_rho(&p, log_pi, lambda, gamma, tau);
    Ok(ScalarizedReward::new(value, Method::StPolicy, lambda).with_temperatures(gamma, tau))
}

/// `lambda'_i = lambda_i lambda_bar_i / sum_j lambda_j lambda_bar_j`.
pub fn lambda_prime(lambda: &PreferenceVector, stats: &RewardStats) -> PreferenceVector {
    let raw: Vec<f64> = lambda
        .weights()
        .iter()
        .zip(&stats.lambda_bar)
        .map(|(&l, &lb)| l * lb)
        .collect();
    PreferenceVector::new(raw).expect("products of positive weights are a valid preference")
}

/// `rho` for every item of every group of `ds`, indexed `[group][item][objective]`.
pub fn rho_table(ds: &RewardDataset, stats: &RewardStats) -> Result<Vec<Vec<Vec<f64>>>> {
    ds.groups()
        .iter()
        .enumerate()
        .map(|(g, group)| group.items.iter().map(|it| rho(&it.rewards, g, stats)).collect())
        .collect()
}

/// Policy-independent scalarized reward of every item, indexed `[group][item]`.
pub fn scalarize_dataset(
    ds: &RewardDataset,
    stats: &RewardStats,
    method: Method,
    lambda: &PreferenceVector,
    gamma: f64,
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    check_len(lambda.weights(), stats.k())?;
    ds.groups()
        .iter()
        .enumerate()
        .map(|(g, group)| {
            group
                .items
                .iter()
                .map(|it| {
                    Ok(match method {
                        Method::Linear => linear_scalarize(&it.rewards, lambda, stats).value,
                        Method::Stz => stz_scalarize(&it.rewards, lambda, stats).value,
                        Method::HardTcheby => hard_tcheby(&rho(&it.rewards, g, stats)?, lambda),
                        Method::St => st_scalarize(&it.rewards, g, lambda, stats, gamma, tau)?.value,
                        Method::StPolicy => {
                            return Err(invalid("the policy-dependent reward needs log-probabilities"))
                        }
                    })
                })
                .collect()
        })
        .collect()
}
