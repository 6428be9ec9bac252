//! Preference pairs and the paired loss family: DPO, offset DPO, the squared
//! variant, and STOMP. All share one per-pair code path; they differ only in
//! the reward term subtracted from the scaled log-ratio difference and in the
//! link applied to the result.
//!
//! With offset `c`, the per-pair argument is `beta * (lr_w - lr_l) - min(1, c)`
//! where `c` is the winner-minus-loser reward plus `delta`. Every loss adds
//! `alpha * (-log pi(y_w) / |y_w|)` per pair.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::PreferenceVector;
use crate::dataset::RewardDataset;
use crate::error::{invalid, Result};
use crate::numeric::{compensated_sum, log_sigmoid, sigmoid};
use crate::policy::{Context, Gradient, SequencePolicy};
use crate::scalarize::st_policy_from_rho;

/// Clamp applied to the reward part of the loss argument.
pub const REWARD_CLAMP: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub group: usize,
    pub winner: usize,
    pub loser: usize,
    /// `R(winner) - R(loser)` under the scalarization used for pairing.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// `pref_term + alpha * nll_term`.
    pub loss: f64,
    pub pref_term: f64,
    pub nll_term: f64,
    pub gradient: Gradient,
    pub n_pairs: usize,
}

/// All ordered pairs `(w, l)` of `group` with `rewards[w] - rewards[l] > delta`,
/// uniformly subsampled to `max_pairs` (order preserved) when there are more.
pub fn build_pairs<R: Rng + ?Sized>(
    group: usize,
    rewards: &[f64],
    delta: f64,
    max_pairs: usize,
    rng: &mut R,
) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for (w, &rw) in rewards.iter().enumerate() {
        for (l, &rl) in rewards.iter().enumerate() {
            let margin = rw - rl;
            if w != l && margin > delta {
                pairs.push(PreferencePair {
                    group,
                    winner: w,
                    loser: l,
                    margin,
                });
            }
        }
    }
    if pairs.len() > max_pairs {
        let mut keep = index::sample(rng, pairs.len(), max_pairs).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|i| pairs[i]).collect();
    }
    pairs
}

/// `log pi_0(y|x)` for every item, indexed `[group][item]`.
pub fn reference_log_probs(reference: &SequencePolicy, ds: &RewardDataset) -> Result<Vec<Vec<f64>>> {
    ds.groups()
        .iter()
        .map(|g| {
            let ctx = Context::from(g);
            g.items.iter().map(|it| reference.log_prob(&ctx, &it.sequence)).collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Link {
    Logistic,
    Squared,
}

enum Offset<'a> {
    None,
    Margin,
    StPolicy {
        rho: &'a [Vec<Vec<f64>>],
        lambda: &'a PreferenceVector,
        gamma: f64,
        tau: f64,
    },
}

struct LossSpec<'a> {
    beta: f64,
    delta: f64,
    alpha: f64,
    link: Link,
    offset: Offset<'a>,
}

/// Shared inputs of every loss.
#[derive(Clone, Copy)]
pub struct PairData<'a> {
    pub dataset: &'a RewardDataset,
    /// Output of [`reference_log_probs`].
    pub reference: &'a [Vec<f64>],
    pub pairs: &'a [PreferencePair],
}

fn check_common(beta: f64, alpha: f64, delta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be > 0, got {beta}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(invalid(format!("delta must be >= 0, got {delta}")));
    }
    Ok(())
}

fn paired_loss(policy: &SequencePolicy, data: PairData<'_>, spec: &LossSpec<'_>) -> Result<LossReport> {
    let ds = data.dataset;
    let mut log_probs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in data.pairs {
        for item in [p.winner, p.loser] {
            if let std::collections::btree_map::Entry::Vacant(e) = log_probs.entry((p.group, item)) {
                let g = ds
                    .group(p.group)
                    .ok_or_else(|| invalid(format!("pair group {} out of range", p.group)))?;
                let it = g
                    .items
                    .get(item)
                    .ok_or_else(|| invalid(format!("pair item {item} out of range")))?;
                e.insert(policy.log_prob(&Context::from(g), &it.sequence)?);
            }
        }
    }

    let mut pref_terms = Vec::with_capacity(data.pairs.len());
    let mut nll_terms = Vec::with_capacity(data.pairs.len());
    let mut coef: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in data.pairs {
        let lp_w = log_probs[&(p.group, p.winner)];
        let lp_l = log_probs[&(p.group, p.loser)];
        let lr_w = lp_w - data.reference[p.group][p.winner];
        let lr_l = lp_l - data.reference[p.group][p.loser];

        // reward offset c and its slopes with respect to lp_w and lp_l
        let (c, dc_w, dc_l) = match &spec.offset {
            Offset::None => (0.0, 0.0, 0.0),
            Offset::Margin => {
                let raw = p.margin + spec.delta;
                (raw.min(REWARD_CLAMP), 0.0, 0.0)
            }
            Offset::StPolicy { rho, lambda, gamma, tau } => {
                let (r_w, s_w) = st_policy_from_rho(&rho[p.group][p.winner], lp_w, lambda, *gamma, *tau);
                let (r_l, s_l) = st_policy_from_rho(&rho[p.group][p.loser], lp_l, lambda, *gamma, *tau);
                let raw = (r_w - r_l) + spec.delta;
                if raw > REWARD_CLAMP {
                    (REWARD_CLAMP, 0.0, 0.0)
                } else {
                    (raw, s_w, -s_l)
                }
            }
        };
        let arg = spec.beta * (lr_w - lr_l) - c;
        let (term, dterm) = match spec.link {
            Link::Logistic => (-log_sigmoid(arg), -sigmoid(-arg)),
            Link::Squared => (arg * arg, 2.0 * arg),
        };
        pref_terms.push(term);

        let len = ds.groups()[p.group].items[p.winner].sequence.len().max(1) as f64;
        nll_terms.push(-lp_w / len);

        *coef.entry((p.group, p.winner)).or_default() += dterm * (spec.beta - dc_w) - spec.alpha / len;
        *coef.entry((p.group, p.loser)).or_default() += dterm * (-spec.beta - dc_l);
    }

    let mut gradient = Gradient::zeros(policy.n_params());
    for (&(g, i), &c) in &coef {
        if c != 0.0 {
            let group = &ds.groups()[g];
            policy.accumulate_log_prob_grad(&Context::from(group), &group.items[i].sequence, c, &mut gradient)?;
        }
    }
    let pref_term = compensated_sum(pref_terms);
    let nll_term = compensated_sum(nll_terms);
    Ok(LossReport {
        loss: pref_term + spec.alpha * nll_term,
        pref_term,
        nll_term,
        gradient,
        n_pairs: data.pairs.len(),
    })
}

/// `sum -log sigma(beta * (lr_w - lr_l))`.
pub fn dpo_loss(policy: &SequencePolicy, data: PairData<'_>, beta: f64, alpha: f64) -> Result<LossReport> {
    check_common(beta, alpha, 0.0)?;
    paired_loss(
        policy,
        data,
        &LossSpec {
            beta,
            delta: 0.0,
            alpha,
            link: Link::Logistic,
            offset: Offset::None,
        },
    )
}

/// `sum -log sigma(beta * (lr_w - lr_l) - min(1, margin + delta))`.
pub fn odpo_loss(policy: &SequencePolicy, data: PairData<'_>, beta: f64, delta: f64, alpha: f64) -> Result<LossReport> {
    check_common(beta, alpha, delta)?;
    paired_loss(
        policy,
        data,
        &LossSpec {
            beta,
            delta,
            alpha,
            link: Link::Logistic,
            offset: Offset::Margin,
        },
    )
}

/// `sum (beta * (lr_w - lr_l) - min(1, margin + delta))^2`.
pub fn squared_pref_loss(policy: &SequencePolicy, data: PairData<'_>, beta: f64, delta: f64, alpha: f64) -> Result<LossReport> {
    check_common(beta, alpha, delta)?;
    paired_loss(
        policy,
        data,
        &LossSpec {
            beta,
            delta,
            alpha,
            link: Link::Squared,
            offset: Offset::Margin,
        },
    )
}

/// STOMP parameters beyond the shared pair data.
#[derive(Clone, Copy)]
pub struct StompParams<'a> {
    /// Distribution-relative rewards indexed `[group][item][objective]`.
    pub rho: &'a [Vec<Vec<f64>>],
    pub lambda: &'a PreferenceVector,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub tau: f64,
}

/// Offset loss on the policy-dependent smooth Tchebysheff reward. The offset
/// keeps its dependence on `log pi` unless the clamp is active.
pub fn stomp_loss(policy: &SequencePolicy, data: PairData<'_>, params: &StompParams<'_>) -> Result<LossReport> {
    check_common(params.beta, params.alpha, params.delta)?;
    if !(params.gamma > 0.0 && params.tau > 0.0) {
        return Err(invalid("gamma and tau must be > 0"));
    }
    if params.lambda.k() != params.rho.first().and_then(|g| g.first()).map_or(params.lambda.k(), Vec::len) {
        return Err(invalid("preference vector length does not match the number of objectives"));
    }
    paired_loss(
        policy,
        data,
        &LossSpec {
            beta: params.beta,
            delta: params.delta,
            alpha: params.alpha,
            link: Link::Logistic,
            offset: Offset::StPolicy {
                rho: params.rho,
                lambda: params.lambda,
                gamma: params.gamma,
                tau: params.tau,
            },
        },
    )
}
