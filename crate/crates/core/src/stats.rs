//! Reward standardization constants: per-objective scale and mean averaged
//! over contexts, per-context log-partition estimates, and the equal-mean
//! preference vector `lambda_bar`.

use serde::{Deserialize, Serialize};

use crate::dataset::RewardDataset;
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, logsumexp, mean, population_variance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub gamma: f64,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    /// `log_partition[m][i]` is the log-partition estimate of objective `i` in context `m`.
    pub log_partition: Vec<Vec<f64>>,
    pub lambda_bar: Vec<f64>,
    pub context_ids: Vec<String>,
}

impl RewardStats {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn group_index(&self, context_id: &str) -> Option<usize> {
        self.context_ids.iter().position(|c| c == context_id)
    }

    /// Mean over training contexts of the log-partition estimates, used for
    /// contexts that were never observed.
    pub fn mean_log_partition(&self) -> Vec<f64> {
        (0..self.k())
            .map(|i| mean(&self.log_partition.iter().map(|z| z[i]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Computes every standardization constant for `ds` at reward temperature `gamma`.
///
/// `sigma_i^2` is the mean over contexts of the within-context population
/// variance and `mu_i` the mean of per-context means. Single-item contexts
/// contribute zero variance (with a warning).
pub fn compute_reward_stats(ds: &RewardDataset, gamma: f64) -> Result<RewardStats> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid(format!("gamma must be > 0, got {gamma}")));
    }
    let k = ds.k();
    let groups = ds.groups();
    let m = groups.len() as f64;

    let singletons = groups.iter().filter(|g| g.len() == 1).count();
    if singletons > 0 {
        log::warn!("{singletons} context(s) have a single item and contribute zero variance");
    }

    let mut sigma = Vec::with_capacity(k);
    let mut mu = Vec::with_capacity(k);
    for i in 0..k {
        let mut vars = Vec::with_capacity(groups.len());
        let mut means = Vec::with_capacity(groups.len());
        for g in groups {
            let values = g.objective(i);
            vars.push(population_variance(&values));
            means.push(mean(&values));
        }
        let s = (compensated_sum(vars) / m).sqrt();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::ConstantObjective(ds.objectives()[i].clone()));
        }
        sigma.push(s);
        mu.push(compensated_sum(means) / m);
    }

    let log_partition: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            (0..k)
                .map(|i| {
                    let scaled: Vec<f64> = g.items.iter().map(|it| it.rewards[i] / (gamma * sigma[i])).collect();
                    logsumexp(&scaled)
                })
                .collect()
        })
        .collect();

    // Hierarchical mean of -rho_i; lambda_bar_i is proportional to its inverse.
    let mut neg_rho_mean = vec![0.0; k];
    for (i, slot) in neg_rho_mean.iter_mut().enumerate() {
        let per_group: Vec<f64> = groups
            .iter()
            .zip(&log_partition)
            .map(|(g, lz)| {
                let vals: Vec<f64> = g
                    .items
                    .iter()
                    .map(|it| -(it.rewards[i] / sigma[i] - gamma * lz[i]))
                    .collect();
                mean(&vals)
            })
            .collect();
        *slot = compensated_sum(per_group) / m;
    }
    if neg_rho_mean.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Numerical(format!(
            "mean distribution-relative reward is zero for some objective ({neg_rho_mean:?}); \
             every context needs at least two distinct rewards"
        )));
    }
    let inv: Vec<f64> = neg_rho_mean.iter().map(|a| 1.0 / a).collect();
    let total: f64 = inv.iter().sum();
    let lambda_bar = inv.iter().map(|x| x / total).collect();

    Ok(RewardStats {
        gamma,
        sigma,
        mu,
        log_partition,
        lambda_bar,
        context_ids: groups.iter().map(|g| g.context_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ContextGroup, Item, Vocabulary};

    pub(crate) fn dataset(groups: Vec<Vec<Vec<f64>>>) -> RewardDataset {
        let k = groups[0][0].len();
        let groups = groups
            .into_iter()
            .enumerate()
            .map(|(g, items)| ContextGroup {
                context_id: format!("ctx{g}"),
                prompt: vec![],
                items: items
                    .into_iter()
                    .enumerate()
                    .map(|(n, rewards)| Item {
                        sequence: vec![(n % 20) as u32, 1],
                        rewards,
                    })
                    .collect(),
            })
            .collect();
        RewardDataset::new(
            (0..k).map(|i| format!("r{i}")).collect(),
            Vocabulary::amino_acids(),
            groups,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_log_partition() {
        // objective 0 is {0, 0}; objective 1 varies so sigma is defined for both.
        let ds = dataset(vec![vec![vec![0.0, 1.0], vec![0.0, -1.0]], vec![vec![1.0, 0.0], vec![-1.0, 0.5]]]);
        let st = compute_reward_stats(&ds, 1.0).unwrap();
        let s0 = st.sigma[0];
        assert!((st.log_partition[0][0] - 2f64.ln()).abs() < 1e-15, "sigma {s0}");
    }

    #[test]
    fn three_item_log_partition_with_unit_scale() {
        // single group {1,2,3}: population variance 2/3; choose gamma so gamma*sigma = 1.
        let ds = dataset(vec![vec![vec![1.0], vec![2.0], vec![3.0]]]);
        let sigma = (2.0f64 / 3.0).sqrt();
        let st = compute_reward_stats(&ds, 1.0 / sigma).unwrap();
        assert!((st.sigma[0] - sigma).abs() < 1e-15);
        assert!((st.gamma * st.sigma[0] - 1.0).abs() < 1e-15);
        assert!((st.log_partition[0][0] - 3.407_605_964_444_38).abs() < 1e-9);
    }

    #[test]
    fn hierarchical_sigma_and_mu() {
        let ds = dataset(vec![vec![vec![0.0], vec![2.0]], vec![vec![10.0], vec![14.0]]]);
        let st = compute_reward_stats(&ds, 0.2).unwrap();
        // variances 1 and 4 -> sigma^2 = 2.5; means 1 and 12 -> mu = 6.5
        assert!((st.sigma[0] - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((st.mu[0] - 6.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_group_log_partition_is_scaled_reward() {
        let ds = dataset(vec![vec![vec![0.0], vec![1.0]], vec![vec![0.0]]]);
        let st = compute_reward_stats(&ds, 0.5).unwrap();
        assert_eq!(st.log_partition[1][0], 0.0);
    }

    #[test]
    fn constant_objective_is_an_error() {
        let ds = dataset(vec![vec![vec![1.0, 0.0], vec![1.0, 1.0]]]);
        assert!(matches!(compute_reward_stats(&ds, 0.2), Err(Error::ConstantObjective(name)) if name == "r0"));
        assert!(compute_reward_stats(&ds, 0.0).is_err());
    }

    #[test]
    fn lambda_bar_on_simplex() {
        let ds = dataset(vec![vec![vec![0.0, 5.0], vec![1.0, 1.0], vec![3.0, 0.0]]]);
        let st = compute_reward_stats(&ds, 0.2).unwrap();
        assert!(st.lambda_bar.iter().all(|&l| l > 0.0));
        assert!((st.lambda_bar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
