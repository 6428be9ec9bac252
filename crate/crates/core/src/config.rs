//! Preference vectors, algorithm tags and run configuration, including the
//! published hyperparameter presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Smallest weight a preference entry may take after clamping.
pub const MIN_WEIGHT: f64 = 1e-6;

/// A preference vector on the probability simplex with strictly positive entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PreferenceVector(Vec<f64>);

impl PreferenceVector {
    /// Normalizes non-negative weights onto the simplex, clamps every entry
    /// to at least [`MIN_WEIGHT`] and renormalizes.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("preference vector is empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid(format!("preference weights must be finite and >= 0: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("preference weights sum to zero"));
        }
        let mut w: Vec<f64> = weights.iter().map(|x| (x / total).max(MIN_WEIGHT)).collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<f64>> for PreferenceVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PreferenceVector> for Vec<f64> {
    fn from(p: PreferenceVector) -> Self {
        p.0
    }
}

impl FromStr for PreferenceVector {
    type Err = Error;

    /// Parses `"1/3,2/3"` or `"0.5,0.5"`.
    fn from_str(s: &str) -> Result<Self> {
        let weights = s
            .split(',')
            .map(|part| parse_fraction(part.trim()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights)
    }
}

impl fmt::Display for PreferenceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| format!("{w:.6}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_fraction(s: &str) -> Result<f64> {
    let bad = || invalid(format!("cannot parse preference weight {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            Ok(n / d)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

/// Parses a `;`-separated grid of preference vectors, e.g. `"1/3,2/3;1/2,1/2"`.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<PreferenceVector>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DpoLin,
    OdpoLin,
    OdpoStz,
    OdpoSq,
    Stomp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::DpoLin,
        Algorithm::OdpoLin,
        Algorithm::OdpoStz,
        Algorithm::OdpoSq,
        Algorithm::Stomp,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::DpoLin => "dpo-lin",
            Algorithm::OdpoLin => "odpo-lin",
            Algorithm::OdpoStz => "odpo-stz",
            Algorithm::OdpoSq => "odpo-sq",
            Algorithm::Stomp => "stomp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| invalid(format!("unknown algorithm `{s}`")))
    }
}

/// AdamW and learning-rate schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 0.05,
            final_lr: 0.025,
            warmup_steps: 20,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 10.0,
        }
    }
}

/// Checkpoint grid used for offline evaluation: 20%, 30%, ..., 100%.
pub fn default_checkpoints() -> Vec<f64> {
    (2..=10).map(|i| i as f64 / 10.0).collect()
}

/// Full description of a preference-optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// NLL regularization weight on winners.
    pub alpha: f64,
    /// KL regularization strength.
    pub beta: f64,
    /// Reward temperature of the per-objective optimal policies.
    pub gamma: f64,
    /// Pair threshold on scalarized reward differences.
    pub delta: f64,
    /// Smoothing temperature of the Tchebysheff scalarization.
    pub tau: f64,
    pub lambda: PreferenceVector,
    /// Train STOMP with `lambda'` (re-weighted by `lambda_bar`).
    pub use_lambda_prime: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub max_pairs_per_context: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Stomp,
            alpha: 0.02,
            beta: 0.1,
            gamma: 0.2,
            delta: 0.5,
            tau: 1.0,
            lambda: PreferenceVector::uniform(2),
            use_lambda_prime: true,
            steps: 200,
            batch_size: 32,
            max_pairs_per_context: 512,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            checkpoints: default_checkpoints(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("beta", self.beta), ("gamma", self.gamma), ("tau", self.tau)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if self.max_pairs_per_context == 0 {
            return Err(invalid("max_pairs_per_context must be >= 1"));
        }
        if self.checkpoints.is_empty() {
            return Err(invalid("at least one checkpoint fraction is required"));
        }
        let mut prev = 0.0;
        for &c in &self.checkpoints {
            if !(c > prev && c <= 1.0) {
                return Err(invalid(format!(
                    "checkpoint fractions must be strictly increasing in (0, 1]: {:?}",
                    self.checkpoints
                )));
            }
            prev = c;
        }
        let o = &self.optimizer;
        if !(o.peak_lr >= 0.0 && o.final_lr >= 0.0 && o.peak_lr.is_finite() && o.final_lr.is_finite()) {
            return Err(invalid("learning rates must be finite and >= 0"));
        }
        if self.steps > 0 && o.warmup_steps >= self.steps {
            return Err(invalid(format!(
                "warmup_steps ({}) must be below steps ({})",
                o.warmup_steps, self.steps
            )));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return Err(invalid("invalid AdamW moment parameters"));
        }
        if o.weight_decay < 0.0 || o.grad_clip < 0.0 {
            return Err(invalid("weight_decay and grad_clip must be >= 0"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Desk-scale defaults with the published PbrR hyperparameters for `algorithm`.
    pub fn preset(algorithm: Algorithm) -> Self {
        let (alpha, beta, gamma, delta) = published_hyperparameters(PublishedDataset::Pbrr, PublishedModel::Progen3_3b, algorithm);
        Self {
            algorithm,
            alpha,
            beta,
            gamma,
            delta,
            ..Self::default()
        }
    }

    /// Training schedule used for the protein language models: 782 batches of
    /// 64, 79 warmup batches to 1e-5, cosine decay to 5e-6.
    pub fn with_published_schedule(mut self) -> Self {
        self.steps = 782;
        self.batch_size = 64;
        self.optimizer.peak_lr = 1e-5;
        self.optimizer.final_lr = 5e-6;
        self.optimizer.warmup_steps = 79;
        self.optimizer.beta1 = 0.9;
        self.optimizer.beta2 = 0.95;
        self
    }
}

/// Experimental settings with published hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PublishedDataset {
    Pbrr,
    Dhfr,
    Amylase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PublishedModel {
    Progen3_3b,
    RA3b,
    RA10b,
}

/// `(alpha, beta, gamma, delta)` for a dataset/model/algorithm combination,
/// including the per-method alpha exceptions.
pub fn published_hyperparameters(dataset: PublishedDataset, model: PublishedModel, algo: Algorithm) -> (f64, f64, f64, f64) {
    use PublishedDataset::*;
    use PublishedModel::*;
    let (mut alpha, beta, gamma, delta) = match (dataset, model) {
        (Pbrr, Progen3_3b) => (0.02, 0.1, 0.2, 1.0),
        (Pbrr, RA3b) => (0.02, 0.1, 0.2, 1.0),
        (Pbrr, RA10b) => (0.01, 0.1, 0.2, 1.0),
        (Dhfr, Progen3_3b) => (0.05, 0.2, 0.2, 1.0),
        (Dhfr, RA3b) => (0.01, 0.2, 0.2, 1.0),
        (Dhfr, RA10b) => (0.05, 0.2, 0.2, 1.0),
        (Amylase, Progen3_3b) => (0.05, 0.05, 0.2, 0.5),
        (Amylase, RA3b) => (0.02, 0.05, 0.2, 0.5),
        (Amylase, RA10b) => (0.02, 0.05, 0.2, 0.5),
    };
    match (dataset, model, algo) {
        (Pbrr, _, Algorithm::OdpoStz) => alpha = 0.05,
        (Pbrr, _, Algorithm::Stomp) => alpha = 0.01,
        (Dhfr, Progen3_3b | RA10b, Algorithm::Stomp) => alpha = 0.02,
        (Amylase, Progen3_3b, Algorithm::DpoLin) => alpha = 0.02,
        _ => {}
    }
    (alpha, beta, gamma, delta)
}

/// Preference grids used per dataset.
pub fn published_lambda_grid(dataset: PublishedDataset) -> Vec<PreferenceVector> {
    let grid: Vec<Vec<f64>> = match dataset {
        PublishedDataset::Pbrr => vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![0.5, 0.5], vec![2.0 / 3.0, 1.0 / 3.0]],
        PublishedDataset::Dhfr => vec![vec![0.5, 0.5]],
        PublishedDataset::Amylase => vec![
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.25, 0.25, 0.5],
            vec![0.4, 0.2, 0.4],
        ],
    };
    grid.into_iter()
        .map(|w| PreferenceVector::new(w).expect("valid preset"))
        .collect()
}
