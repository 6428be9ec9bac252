//! Gibbs-with-Gradients Metropolis-Hastings over fixed-length sequences with
//! energy `E(y) = -log pi(y|x)`.
//!
//! Single-site substitutions are proposed from a softmax over the first-order
//! estimate of each substitution's energy change; acceptance uses the exact
//! change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Token;
use crate::error::{invalid, Result};
use crate::numeric::softmax_with_lse;
use crate::parallel;
use crate::policy::{Context, SequencePolicy};

pub fn energy(policy: &SequencePolicy, ctx: &Context<'_>, seq: &[Token]) -> Result<f64> {
    Ok(-policy.log_prob(ctx, seq)?)
}

/// Substitution of `token` at `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub position: usize,
    pub token: Token,
}

/// Proposal probabilities over all single-site substitutions of `seq`, in
/// position-major order. Empty when no substitution exists.
pub fn proposal_distribution(
    policy: &SequencePolicy,
    ctx: &Context<'_>,
    seq: &[Token],
    proposal_temp: f64,
) -> Result<Vec<(Move, f64)>> {
    if !(proposal_temp > 0.0) {
        return Err(invalid(format!("proposal temperature must be > 0, got {proposal_temp}")));
    }
    let a = policy.n_letters();
    let grad = policy.energy_grad_onehot(ctx, seq)?;
    let mut moves = Vec::with_capacity(seq.len() * a.saturating_sub(1));
    let mut logits = Vec::with_capacity(moves.capacity());
    for (t, &cur) in seq.iter().enumerate() {
        let row = &grad[t * a..(t + 1) * a];
        for v in 0..a {
            if v != cur as usize {
                moves.push(Move {
                    position: t,
                    token: v as Token,
                });
                logits.push(-(row[v] - row[cur as usize]) / proposal_temp);
            }
        }
    }
    let (p, _) = softmax_with_lse(&logits);
    Ok(moves.into_iter().zip(p).collect())
}

/// `min(1, exp(-(e_new - e_old)) * q_rev / q_fwd)`.
pub fn acceptance_probability(e_old: f64, e_new: f64, log_q_fwd: f64, log_q_rev: f64) -> f64 {
    let log_a = -(e_new - e_old) + log_q_rev - log_q_fwd;
    if log_a >= 0.0 {
        1.0
    } else {
        log_a.exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwgState {
    pub sequence: Vec<Token>,
    pub energy: f64,
    pub step: usize,
    pub trajectory: usize,
    pub wild_type: Vec<Token>,
}

impl GwgState {
    pub fn new(policy: &SequencePolicy, ctx: &Context<'_>, wild_type: &[Token], trajectory: usize) -> Result<Self> {
        Ok(Self {
            sequence: wild_type.to_vec(),
            energy: energy(policy, ctx, wild_type)?,
            step: 0,
            trajectory,
            wild_type: wild_type.to_vec(),
        })
    }

    pub fn n_mutations(&self) -> usize {
        hamming(&self.sequence, &self.wild_type)
    }
}

pub fn hamming(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// A proposed candidate with forward and reverse proposal log-densities.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub candidate: Vec<Token>,
    pub log_q_fwd: f64,
    pub log_q_rev: f64,
}

pub fn propose<R: Rng + ?Sized>(
    state: &GwgState,
    policy: &SequencePolicy,
    ctx: &Context<'_>,
    proposal_temp: f64,
    rng: &mut R,
) -> Result<Option<Proposal>> {
    let dist = proposal_distribution(policy, ctx, &state.sequence, proposal_temp)?;
    if dist.is_empty() {
        return Ok(None);
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = dist.len() - 1;
    for (i, (_, p)) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = i;
            break;
        }
    }
    let (mv, p_fwd) = dist[chosen];
    let mut candidate = state.sequence.clone();
    let back = candidate[mv.position];
    candidate[mv.position] = mv.token;
    let rev = proposal_distribution(policy, ctx, &candidate, proposal_temp)?;
    let p_rev = rev
        .iter()
        .find(|(m, _)| m.position == mv.position && m.token == back)
        .map(|(_, p)| *p)
        .expect("reverse move exists");
    Ok(Some(Proposal {
        candidate,
        log_q_fwd: p_fwd.ln(),
        log_q_rev: p_rev.ln(),
    }))
}

/// Metropolis-Hastings decision; returns whether the candidate was accepted.
pub fn accept<R: Rng + ?Sized>(
    state: &mut GwgState,
    proposal: Proposal,
    policy: &SequencePolicy,
    ctx: &Context<'_>,
    rng: &mut R,
) -> Result<bool> {
    let e_new = energy(policy, ctx, &proposal.candidate)?;
    let a = acceptance_probability(state.energy, e_new, proposal.log_q_fwd, proposal.log_q_rev);
    let u: f64 = rng.gen();
    state.step += 1;
    if u < a {
        state.sequence = proposal.candidate;
        state.energy = e_new;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// One full sampler step.
pub fn step<R: Rng + ?Sized>(
    state: &mut GwgState,
    policy: &SequencePolicy,
    ctx: &Context<'_>,
    proposal_temp: f64,
    rng: &mut R,
) -> Result<bool> {
    match propose(state, policy, ctx, proposal_temp, rng)? {
        Some(p) => accept(state, p, policy, ctx, rng),
        None => {
            state.step += 1;
            Ok(false)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GwgOptions {
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub max_mutations: usize,
    pub proposal_temp: f64,
    /// Leading fraction of each trajectory's steps that is discarded.
    pub burn_in: f64,
    pub thin: usize,
}

impl Default for GwgOptions {
    fn default() -> Self {
        Self {
            n_trajectories: 100,
            n_steps: 100,
            max_mutations: 10,
            proposal_temp: 2.0,
            burn_in: 0.1,
            thin: 1,
        }
    }
}

impl GwgOptions {
    /// 1500 trajectories of 300 steps, keeping at most 10 mutations.
    pub fn published() -> Self {
        Self {
            n_trajectories: 1500,
            n_steps: 300,
            max_mutations: 10,
            ..Self::default()
        }
    }

    fn first_kept(&self) -> usize {
        (self.burn_in * self.n_steps as f64).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwgSample {
    pub trajectory: usize,
    pub step: usize,
    pub sequence: Vec<Token>,
    pub energy: f64,
    pub n_mutations: usize,
}

/// Runs independent chains from `wild_type`, trajectory `i` conditioned on
/// `contexts[i % len]`, and returns the kept post-burn-in states within
/// `max_mutations` of the wild type.
pub fn run_trajectories<R: Rng + ?Sized>(
    policy: &SequencePolicy,
    contexts: &[Context<'_>],
    wild_type: &[Token],
    opts: &GwgOptions,
    rng: &mut R,
) -> Result<Vec<GwgSample>> {
    if contexts.is_empty() {
        return Err(invalid("at least one context is required"));
    }
    if !(0.0..=1.0).contains(&opts.burn_in) || opts.thin == 0 {
        return Err(invalid("burn_in must be in [0, 1] and thin >= 1"));
    }
    let first = opts.first_kept();
    let seeds: Vec<u64> = (0..opts.n_trajectories).map(|_| rng.gen()).collect();
    let per_traj = parallel::map_range(opts.n_trajectories, |i| -> Result<Vec<GwgSample>> {
        let ctx = &contexts[i % contexts.len()];
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        let mut state = GwgState::new(policy, ctx, wild_type, i)?;
        let mut out = Vec::new();
        let mut keep = |s: &GwgState| {
            if s.step >= first && (s.step - first) % opts.thin == 0 && s.n_mutations() <= opts.max_mutations {
                out.push(GwgSample {
                    trajectory: i,
                    step: s.step,
                    sequence: s.sequence.clone(),
                    energy: s.energy,
                    n_mutations: s.n_mutations(),
                });
            }
        };
        keep(&state);
        for _ in 0..opts.n_steps {
            step(&mut state, policy, ctx, opts.proposal_temp, &mut r)?;
            keep(&state);
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for t in per_traj {
        all.extend(t?);
    }
    Ok(all)
}
