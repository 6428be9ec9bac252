//! Algorithm × preference grids: training, offline evaluation of every
//! checkpoint, and per-algorithm fronts.

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, PreferenceVector, RunConfig};
use crate::dataset::RewardDataset;
use crate::error::{invalid, Result};
use crate::evaluate::{checkpoint_front, default_reference, wis_many, CheckpointFront, ExpectedReward, WisForm};
use crate::parallel;
use crate::policy::SequencePolicy;
use crate::trainer::{train, TrainOutcome};

#[derive(Clone, Debug)]
pub struct GridRun {
    pub config: RunConfig,
    pub outcome: TrainOutcome,
}

impl GridRun {
    /// Directory-safe run name, e.g. `stomp_l0.3333-0.6667`.
    pub fn name(&self) -> String {
        run_name(self.config.algorithm, &self.config.lambda)
    }
}

pub fn run_name(algorithm: Algorithm, lambda: &PreferenceVector) -> String {
    let l: Vec<String> = lambda.weights().iter().map(|w| format!("{w:.4}")).collect();
    format!("{algorithm}_l{}", l.join("-"))
}

/// Configs for every `(algorithm, lambda)` pair, each starting from `base(algorithm)`.
pub fn grid_configs(
    algorithms: &[Algorithm],
    lambdas: &[PreferenceVector],
    base: impl Fn(Algorithm) -> RunConfig,
) -> Vec<RunConfig> {
    algorithms
        .iter()
        .flat_map(|&a| {
            let base = &base;
            lambdas.iter().map(move |l| RunConfig {
                algorithm: a,
                lambda: l.clone(),
                ..base(a)
            })
        })
        .collect()
}

/// Trains every config on `ds` from `reference`, in parallel.
pub fn run_grid(configs: &[RunConfig], ds: &RewardDataset, reference: &SequencePolicy) -> Result<Vec<GridRun>> {
    parallel::map(configs, |c| {
        train(c, ds, reference).map(|outcome| GridRun {
            config: c.clone(),
            outcome,
        })
    })
    .into_iter()
    .map(|r| r.map_err(|e| e.error))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub algorithm: Algorithm,
    pub lambda: PreferenceVector,
    pub fraction: f64,
    pub step: usize,
    pub expected: ExpectedReward,
}

/// WIS expected rewards of every checkpoint of every run on `test`.
pub fn evaluate_grid(runs: &[GridRun], reference: &SequencePolicy, test: &RewardDataset, form: WisForm) -> Result<Vec<EvalRow>> {
    let mut labelled = Vec::new();
    let mut meta = Vec::new();
    for run in runs {
        for c in &run.outcome.checkpoints {
            labelled.push((format!("{}@{}", run.name(), c.fraction), &c.policy));
            meta.push((run.config.algorithm, run.config.lambda.clone(), c.fraction, c.step));
        }
    }
    let expected = wis_many(&labelled, reference, test, form)?;
    Ok(meta
        .into_iter()
        .zip(expected)
        .map(|((algorithm, lambda, fraction, step), expected)| EvalRow {
            algorithm,
            lambda,
            fraction,
            step,
            expected,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmFront {
    pub algorithm: Algorithm,
    /// Indices into the rows passed to [`algorithm_fronts`].
    pub rows: Vec<usize>,
    pub front: CheckpointFront,
}

/// Per-algorithm fronts across all preference vectors and checkpoints, with
/// one reference point shared by all algorithms (the default reference of
/// the pooled rows unless given).
pub fn algorithm_fronts(rows: &[EvalRow], reference: Option<&[f64]>) -> Result<Vec<AlgorithmFront>> {
    if rows.is_empty() {
        return Err(invalid("no evaluation rows"));
    }
    let reference = match reference {
        Some(r) => r.to_vec(),
        None => default_reference(&rows.iter().map(|r| r.expected.values.clone()).collect::<Vec<_>>()),
    };
    let mut algos: Vec<Algorithm> = Vec::new();
    for r in rows {
        if !algos.contains(&r.algorithm) {
            algos.push(r.algorithm);
        }
    }
    algos
        .into_iter()
        .map(|a| {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].algorithm == a).collect();
            let cands: Vec<ExpectedReward> = idx.iter().map(|&i| rows[i].expected.clone()).collect();
            Ok(AlgorithmFront {
                algorithm: a,
                front: checkpoint_front(&cands, Some(&reference))?,
                rows: idx,
            })
        })
        .collect()
}
