//! Training loop: AdamW with linear warmup and cosine decay, seeded pair
//! batching over shuffled contexts, gradient-norm clipping and fractional
//! checkpoints.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, OptimizerConfig, PreferenceVector, RunConfig};
use crate::dataset::RewardDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{
    build_pairs, dpo_loss, odpo_loss, reference_log_probs, squared_pref_loss, stomp_loss, LossReport, PairData,
    PreferencePair, StompParams,
};
use crate::policy::{Gradient, SequencePolicy};
use crate::scalarize::{lambda_prime, rho_table, scalarize_dataset, Method};
use crate::stats::{compute_reward_stats, RewardStats};

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `final_lr` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak_lr: f64, final_lr: f64) -> Result<f64> {
    if step > total_steps {
        return Err(invalid(format!("step {step} beyond total {total_steps}")));
    }
    if warmup_steps >= total_steps {
        return Err(invalid(format!("warmup {warmup_steps} must be below total {total_steps}")));
    }
    if step < warmup_steps {
        return Ok(peak_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// AdamW moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }
}

/// One AdamW update of `params` along the descent direction of `grad`.
pub fn adamw_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(invalid("optimizer, parameter and gradient shapes differ"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", grad[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *p *= 1.0 - lr * state.weight_decay;
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Scales `grad` so its Euclidean norm is at most `max_norm` (`0` disables).
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut Gradient, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if max_norm > 0.0 && norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Batch loss averaged over pairs.
    pub loss: f64,
    pub pref_term: f64,
    pub nll_term: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fraction: f64,
    pub step: usize,
    pub config_hash: String,
    pub metrics: Option<StepMetrics>,
    pub policy: SequencePolicy,
}

impl Checkpoint {
    pub fn file_name(&self) -> String {
        format!("ckpt_{}.json", self.fraction)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.policy = c.policy.validated()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<StepMetrics>,
    pub policy: SequencePolicy,
    pub stats: RewardStats,
    /// Preference vector the loss was trained with (after any re-weighting).
    pub lambda: PreferenceVector,
}

impl TrainOutcome {
    /// Writes every checkpoint and `metrics.csv` into `dir`.
    pub fn write_run(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for c in &self.checkpoints {
            c.save(dir.join(c.file_name()))?;
        }
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Training failure; divergence keeps what was trained so far.
#[derive(Debug)]
pub struct TrainError {
    pub error: Error,
    pub partial: Option<Box<TrainOutcome>>,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.partial {
            Some(p) => write!(f, "{} (after {} steps)", self.error, p.metrics.len()),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for TrainError {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

/// Scalarization used to rank items for each algorithm.
pub fn pairing_method(algorithm: Algorithm) -> Method {
    match algorithm {
        Algorithm::DpoLin | Algorithm::OdpoLin | Algorithm::OdpoSq => Method::Linear,
        Algorithm::OdpoStz => Method::Stz,
        Algorithm::Stomp => Method::St,
    }
}

/// Step indices (in completed updates) at which each checkpoint fraction is taken.
pub fn checkpoint_steps(fractions: &[f64], total_steps: usize) -> Vec<usize> {
    fractions.iter().map(|f| (f * total_steps as f64).round() as usize).collect()
}

struct LossContext<'a> {
    config: &'a RunConfig,
    ds: &'a RewardDataset,
    reference: Vec<Vec<f64>>,
    rho: Vec<Vec<Vec<f64>>>,
    lambda: PreferenceVector,
}

impl LossContext<'_> {
    fn evaluate(&self, policy: &SequencePolicy, pairs: &[PreferencePair]) -> Result<LossReport> {
        let c = self.config;
        let data = PairData {
            dataset: self.ds,
            reference: &self.reference,
            pairs,
        };
        match c.algorithm {
            Algorithm::DpoLin => dpo_loss(policy, data, c.beta, c.alpha),
            Algorithm::OdpoLin | Algorithm::OdpoStz => odpo_loss(policy, data, c.beta, c.delta, c.alpha),
            Algorithm::OdpoSq => squared_pref_loss(policy, data, c.beta, c.delta, c.alpha),
            Algorithm::Stomp => stomp_loss(
                policy,
                data,
                &StompParams {
                    rho: &self.rho,
                    lambda: &self.lambda,
                    alpha: c.alpha,
                    beta: c.beta,
                    gamma: c.gamma,
                    delta: c.delta,
                    tau: c.tau,
                },
            ),
        }
    }
}

/// Trains a copy of `reference` on `ds` with the algorithm and schedule in `config`.
pub fn train(config: &RunConfig, ds: &RewardDataset, reference: &SequencePolicy) -> std::result::Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.lambda.k() != ds.k() {
        return Err(invalid(format!(
            "preference vector has {} entries but the dataset has {} objectives",
            config.lambda.k(),
            ds.k()
        ))
        .into());
    }
    let stats = compute_reward_stats(ds, config.gamma)?;
    let lambda = if config.algorithm == Algorithm::Stomp && config.use_lambda_prime {
        lambda_prime(&config.lambda, &stats)
    } else {
        config.lambda.clone()
    };
    let rewards = scalarize_dataset(ds, &stats, pairing_method(config.algorithm), &lambda, config.gamma, config.tau)?;
    let rho = if config.algorithm == Algorithm::Stomp {
        rho_table(ds, &stats)?
    } else {
        Vec::new()
    };
    let ctx = LossContext {
        config,
        ds,
        reference: reference_log_probs(reference, ds)?,
        rho,
        lambda: lambda.clone(),
    };

    let total = config.steps;
    let hash = config.hash();
    let ckpt_steps = checkpoint_steps(&config.checkpoints, total);
    let mut policy = reference.clone();
    let mut opt = OptimizerState::new(policy.n_params(), &config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics: Vec<StepMetrics> = Vec::with_capacity(total);
    let mut checkpoints = Vec::with_capacity(ckpt_steps.len());

    let snapshot = |policy: &SequencePolicy, step: usize, metrics: &[StepMetrics], out: &mut Vec<Checkpoint>| {
        for (&f, &s) in config.checkpoints.iter().zip(&ckpt_steps) {
            if s == step {
                out.push(Checkpoint {
                    fraction: f,
                    step,
                    config_hash: hash.clone(),
                    metrics: metrics.last().cloned(),
                    policy: policy.clone(),
                });
            }
        }
    };
    snapshot(&policy, 0, &metrics, &mut checkpoints);

    let mut order: Vec<usize> = (0..ds.groups().len()).collect();
    let mut step = 0;
    let mut epoch_batches: Vec<Vec<PreferencePair>> = Vec::new();
    while step < total {
        if epoch_batches.is_empty() {
            order.shuffle(&mut rng);
            let mut pairs = Vec::new();
            for &g in &order {
                pairs.extend(build_pairs(g, &rewards[g], config.delta, config.max_pairs_per_context, &mut rng));
            }
            if pairs.is_empty() {
                return Err(Error::Dataset(format!(
                    "no preference pairs with reward difference above delta = {}",
                    config.delta
                ))
                .into());
            }
            epoch_batches = pairs.chunks(config.batch_size).rev().map(<[_]>::to_vec).collect();
        }
        let batch = epoch_batches.pop().expect("non-empty epoch");

        let lr = lr_at(
            step + 1,
            total,
            config.optimizer.warmup_steps,
            config.optimizer.peak_lr,
            config.optimizer.final_lr,
        )?;
        let result = ctx.evaluate(&policy, &batch).and_then(|mut report| {
            let n = report.n_pairs as f64;
            report.gradient.scale(1.0 / n);
            if !report.loss.is_finite() || !report.gradient.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {}", step + 1)));
            }
            clip_grad_norm(&mut report.gradient, config.optimizer.grad_clip);
            adamw_step(&mut opt, policy.params_mut(), &report.gradient.0, lr)?;
            Ok(StepMetrics {
                step: step + 1,
                loss: report.loss / n,
                pref_term: report.pref_term / n,
                nll_term: report.nll_term / n,
                lr,
            })
        });
        let m = match result {
            Ok(m) => m,
            Err(error) => {
                log::error!("training aborted at step {}: {error}", step + 1);
                let partial = TrainOutcome {
                    checkpoints,
                    metrics,
                    policy,
                    stats,
                    lambda,
                };
                return Err(TrainError {
                    error,
                    partial: Some(Box::new(partial)),
                });
            }
        };
        log::debug!("step {} loss {:.6} lr {:.3e}", m.step, m.loss, m.lr);
        metrics.push(m);
        step += 1;
        snapshot(&policy, step, &metrics, &mut checkpoints);
    }

    Ok(TrainOutcome {
        checkpoints,
        metrics,
        policy,
        stats,
        lambda,
    })
}

/// `exp` of the mean per-emission negative log-likelihood.
pub fn perplexity(policy: &SequencePolicy, ds: &RewardDataset) -> Result<f64> {
    Ok(policy.mean_nll(ds)?.exp())
}
