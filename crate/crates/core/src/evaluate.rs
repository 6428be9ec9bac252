//! Offline evaluation: weighted importance sampling of expected rewards,
//! Pareto filtering, exact and Monte Carlo hypervolume, and checkpoint-front
//! selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RewardDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::reference_log_probs;
use crate::numeric::{compensated_sum, softmax};
use crate::parallel;
use crate::policy::SequencePolicy;

/// Per-context normalization of the importance-weighted estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WisForm {
    /// `(1/M) sum_m (1/N_m) sum_n w_mn r_mn` with self-normalized `w`.
    #[default]
    Printed,
    /// `(1/M) sum_m sum_n w_mn r_mn`.
    SelfNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedReward {
    pub label: String,
    pub values: Vec<f64>,
    /// Effective sample size `1 / sum_n w_n^2` per context.
    pub ess: Vec<f64>,
}

/// Self-normalized importance weights from log-ratios `log pi - log pi_0`.
pub fn wis_weights(log_ratios: &[f64]) -> Vec<f64> {
    softmax(log_ratios)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Estimate from precomputed log-ratios indexed `[group][item]`.
pub fn wis_from_log_ratios(ds: &RewardDataset, log_ratios: &[Vec<f64>], form: WisForm) -> Result<ExpectedReward> {
    if log_ratios.len() != ds.groups().len() {
        return Err(invalid("log-ratio table does not match the dataset"));
    }
    let k = ds.k();
    let mut per_context: Vec<Vec<f64>> = vec![Vec::with_capacity(ds.groups().len()); k];
    let mut ess = Vec::with_capacity(ds.groups().len());
    for (g, lr) in ds.groups().iter().zip(log_ratios) {
        if g.is_empty() || lr.len() != g.len() {
            return Err(Error::Dataset(format!("context `{}` has no scorable items", g.context_id)));
        }
        if let Some(x) = lr.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("log-ratio {x} in context `{}`", g.context_id)));
        }
        let w = wis_weights(lr);
        ess.push(effective_sample_size(&w));
        let scale = match form {
            WisForm::Printed => 1.0 / g.len() as f64,
            WisForm::SelfNormalized => 1.0,
        };
        for (i, slot) in per_context.iter_mut().enumerate() {
            let s = compensated_sum(w.iter().zip(&g.items).map(|(wn, it)| wn * it.rewards[i]));
            slot.push(scale * s);
        }
    }
    let m = ds.groups().len() as f64;
    Ok(ExpectedReward {
        label: String::new(),
        values: per_context.into_iter().map(|v| compensated_sum(v) / m).collect(),
        ess,
    })
}

/// Weighted importance sampling estimate of `E_pi[r_i]` on a test set drawn from `pi_0`.
pub fn wis_expected_rewards(
    policy: &SequencePolicy,
    reference: &SequencePolicy,
    ds: &RewardDataset,
    form: WisForm,
) -> Result<ExpectedReward> {
    let lp0 = reference_log_probs(reference, ds)?;
    wis_with_reference(policy, &lp0, ds, form)
}

fn wis_with_reference(policy: &SequencePolicy, lp0: &[Vec<f64>], ds: &RewardDataset, form: WisForm) -> Result<ExpectedReward> {
    let lp = reference_log_probs(policy, ds)?;
    let lr: Vec<Vec<f64>> = lp
        .iter()
        .zip(lp0)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    wis_from_log_ratios(ds, &lr, form)
}

/// Evaluates several policies against one reference, in parallel, preserving order.
pub fn wis_many(
    policies: &[(String, &SequencePolicy)],
    reference: &SequencePolicy,
    ds: &RewardDataset,
    form: WisForm,
) -> Result<Vec<ExpectedReward>> {
    let lp0 = reference_log_probs(reference, ds)?;
    parallel::map(policies, |(label, p)| {
        wis_with_reference(p, &lp0, ds, form).map(|mut e| {
            e.label = label.clone();
            e
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub values: Vec<f64>,
    pub label: String,
}

/// `a` Pareto-dominates `b` under maximization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Indices of non-dominated points, in input order.
pub fn pareto_indices(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

pub fn pareto_filter(points: &[FrontPoint]) -> Vec<FrontPoint> {
    let values: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    pareto_indices(&values).into_iter().map(|i| points[i].clone()).collect()
}

fn check_points(points: &[Vec<f64>], reference: &[f64]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.len() != reference.len()) {
        return Err(invalid(format!(
            "point of dimension {} with a {}-dimensional reference",
            p.len(),
            reference.len()
        )));
    }
    if points.iter().flatten().chain(reference).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hypervolume input".into()));
    }
    Ok(())
}

/// Points strictly better than `reference` in every coordinate; others add no volume.
fn above<'a>(points: &'a [Vec<f64>], reference: &[f64]) -> Vec<&'a [f64]> {
    points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x > r))
        .map(Vec::as_slice)
        .collect()
}

fn area_2d(points: &mut [(f64, f64)], rx: f64, ry: f64) -> f64 {
    points.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cur = ry;
    let mut area = 0.0;
    for &(x, y) in points.iter() {
        if y > cur {
            area += (x - rx) * (y - cur);
            cur = y;
        }
    }
    area
}

/// Non-dominated 2D staircase with incremental area.
struct Staircase {
    /// Sorted by x ascending (so y descending).
    steps: Vec<(f64, f64)>,
    rx: f64,
    ry: f64,
}

impl Staircase {
    fn insert(&mut self, x: f64, y: f64) {
        if self.steps.iter().any(|&(a, b)| a >= x && b >= y) {
            return;
        }
        self.steps.retain(|&(a, b)| !(a <= x && b <= y));
        let pos = self.steps.partition_point(|&(a, _)| a < x);
        self.steps.insert(pos, (x, y));
    }

    fn area(&self) -> f64 {
        // walk x descending with rising y
        let mut area = 0.0;
        let mut cur = self.ry;
        for &(x, y) in self.steps.iter().rev() {
            area += (x - self.rx) * (y - cur);
            cur = y;
        }
        area
    }
}

/// Exact volume dominated by `points` and bounded below by `reference` (k <= 3).
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    check_points(points, reference)?;
    let pts = above(points, reference);
    match reference.len() {
        0 => Err(invalid("hypervolume needs at least one objective")),
        1 => Ok(pts.iter().map(|p| p[0] - reference[0]).fold(0.0, f64::max)),
        2 => {
            let mut xy: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
            Ok(area_2d(&mut xy, reference[0], reference[1]))
        }
        3 => {
            let mut sorted = pts;
            sorted.sort_by(|a, b| b[2].total_cmp(&a[2]));
            let mut stairs = Staircase {
                steps: Vec::new(),
                rx: reference[0],
                ry: reference[1],
            };
            let mut volume = 0.0;
            for (i, p) in sorted.iter().enumerate() {
                stairs.insert(p[0], p[1]);
                let next_z = sorted.get(i + 1).map_or(reference[2], |q| q[2]);
                if p[2] > next_z {
                    volume += stairs.area() * (p[2] - next_z);
                }
            }
            Ok(volume)
        }
        k => Err(Error::Unsupported(format!(
            "exact hypervolume for {k} objectives; use hypervolume_mc"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Monte Carlo hypervolume over the box spanned by `reference` and the
/// coordinate-wise maximum of the points.
pub fn hypervolume_mc<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    reference: &[f64],
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_points(points, reference)?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be >= 1"));
    }
    let pts = above(points, reference);
    if pts.is_empty() {
        return Ok(McEstimate { value: 0.0, stderr: 0.0 });
    }
    let upper: Vec<f64> = (0..reference.len())
        .map(|i| pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let box_volume: f64 = upper.iter().zip(reference).map(|(u, r)| u - r).product();
    if !(box_volume > 0.0 && box_volume.is_finite()) {
        return Err(Error::Numerical(format!("degenerate sampling box of volume {box_volume}")));
    }
    let mut hits = 0usize;
    let mut z = vec![0.0; reference.len()];
    for _ in 0..n_samples {
        for ((zi, &r), &u) in z.iter_mut().zip(reference).zip(&upper) {
            *zi = r + rng.gen::<f64>() * (u - r);
        }
        if pts.iter().any(|p| p.iter().zip(&z).all(|(a, b)| a >= b)) {
            hits += 1;
        }
    }
    let p = hits as f64 / n_samples as f64;
    Ok(McEstimate {
        value: box_volume * p,
        stderr: box_volume * (p * (1.0 - p) / n_samples as f64).sqrt(),
    })
}

/// Per-objective minimum minus `1e-9`, so every point adds volume.
pub fn default_reference(points: &[Vec<f64>]) -> Vec<f64> {
    let k = points.first().map_or(0, Vec::len);
    (0..k)
        .map(|i| points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min) - 1e-9)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFront {
    pub reference: Vec<f64>,
    /// Candidate indices on the Pareto front, in input order.
    pub front: Vec<usize>,
    pub hypervolume: f64,
    /// One or two candidate indices whose joint hypervolume is largest.
    pub selected: Vec<usize>,
}

/// Pareto front of the candidates' expected rewards, its hypervolume, and the
/// pair of front members with the greatest joint hypervolume (one member if
/// the front has a single point). `reference` defaults to [`default_reference`].
pub fn checkpoint_front(candidates: &[ExpectedReward], reference: Option<&[f64]>) -> Result<CheckpointFront> {
    if candidates.is_empty() {
        return Err(invalid("checkpoint_front needs at least one candidate"));
    }
    let values: Vec<Vec<f64>> = candidates.iter().map(|c| c.values.clone()).collect();
    let reference = reference.map_or_else(|| default_reference(&values), <[f64]>::to_vec);
    let front = pareto_indices(&values);
    let front_values: Vec<Vec<f64>> = front.iter().map(|&i| values[i].clone()).collect();
    let hv = hypervolume(&front_values, &reference)?;
    let selected = if front.len() == 1 {
        vec![front[0]]
    } else {
        let mut best = (f64::NEG_INFINITY, 0, 1);
        for a in 0..front.len() {
            for b in a + 1..front.len() {
                let v = hypervolume(&[front_values[a].clone(), front_values[b].clone()], &reference)?;
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        vec![front[best.1], front[best.2]]
    };
    Ok(CheckpointFront {
        reference,
        front,
        hypervolume: hv,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ContextGroup, Item, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds(groups: Vec<Vec<f64>>) -> RewardDataset {
        RewardDataset::new(
            vec!["r".into()],
            Vocabulary::new("AB".chars()).unwrap(),
            groups
                .into_iter()
                .enumerate()
                .map(|(g, rs)| ContextGroup {
                    context_id: format!("c{g}"),
                    prompt: vec![],
                    items: rs
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| Item {
                            sequence: vec![(i % 2) as u32; i / 2 + 1],
                            rewards: vec![r],
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_log_ratio_closed_form() {
        let d = ds(vec![vec![1.0, 2.0, 6.0], vec![4.0]]);
        let lr = vec![vec![0.0; 3], vec![0.0]];
        let e = wis_from_log_ratios(&d, &lr, WisForm::Printed).unwrap();
        // ((1/3) * mean{1,2,6} + 1 * 4) / 2
        assert_eq!(e.values[0], ((1.0 / 3.0) * 3.0 + 4.0) / 2.0);
        let e = wis_from_log_ratios(&d, &lr, WisForm::SelfNormalized).unwrap();
        assert!((e.values[0] - 3.5).abs() < 1e-15);
        assert!((e.ess[0] - 3.0).abs() < 1e-12 && e.ess[1] == 1.0);
    }

    #[test]
    fn two_item_weights() {
        let w = wis_weights(&[2.0, 0.0]);
        let s = 1.0 / (1.0 + (-2f64).exp());
        assert!((w[0] - s).abs() < 1e-15 && (w[1] - (1.0 - s)).abs() < 1e-15);
        assert!((w[0] - 0.8808).abs() < 1e-4);
        let d = ds(vec![vec![1.0, 0.0]]);
        let e = wis_from_log_ratios(&d, &[vec![2.0, 0.0]], WisForm::SelfNormalized).unwrap();
        assert!((e.values[0] - s).abs() < 1e-15);
    }

    #[test]
    fn pi_equals_pi0() {
        let d = ds(vec![vec![1.0, 2.0, 6.0], vec![4.0, -1.0]]);
        let mut p = SequencePolicy::uniform(d.vocab(), 4);
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        let e = wis_expected_rewards(&p, &p, &d, WisForm::Printed).unwrap();
        assert_eq!(e.values[0], ((1.0 / 3.0) * 3.0 + 0.5 * 1.5) / 2.0);
    }

    #[test]
    fn shift_invariance() {
        let d = ds(vec![vec![1.0, 2.0, 6.0]]);
        let a = wis_from_log_ratios(&d, &[vec![0.3, -1.0, 2.0]], WisForm::Printed).unwrap();
        let b = wis_from_log_ratios(&d, &[vec![100.3, 99.0, 102.0]], WisForm::Printed).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 1e-13);
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_indices(&[vec![1.0, 2.0], vec![2.0, 1.0]]), vec![0, 1]);
        assert_eq!(pareto_indices(&[vec![1.0, 1.0], vec![2.0, 2.0]]), vec![1]);
        assert_eq!(pareto_indices(&[vec![1.0, 1.0], vec![1.0, 1.0]]), vec![0, 1]);
    }

    #[test]
    fn pareto_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let brute: Vec<usize> = (0..pts.len())
            .filter(|&i| {
                !(0..pts.len()).any(|j| {
                    (0..3).all(|d| pts[j][d] >= pts[i][d]) && (0..3).any(|d| pts[j][d] > pts[i][d])
                })
            })
            .collect();
        assert_eq!(pareto_indices(&pts), brute);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[vec![1.0, 1.0]], &[0.0, 0.0]).unwrap(), 1.0);
        let stair = [vec![1.0, 3.0], vec![2.0, 2.0], vec![3.0, 1.0]];
        assert_eq!(hypervolume(&stair, &[0.0, 0.0]).unwrap(), 6.0);
        assert_eq!(hypervolume(&[vec![2.0, 3.0, 4.0]], &[0.0; 3]).unwrap(), 24.0);
        assert!(matches!(hypervolume(&[vec![1.0; 4]], &[0.0; 4]), Err(Error::Unsupported(_))));
        assert_eq!(hypervolume(&[], &[0.0, 0.0]).unwrap(), 0.0);
        // below the reference in one coordinate: dropped
        assert_eq!(hypervolume(&[vec![5.0, -1.0]], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn three_d_union_of_boxes() {
        // two boxes [0,2]x[0,1]x[0,1] and [0,1]x[0,2]x[0,3]: 2 + 6 - 1 = 7
        let v = hypervolume(&[vec![2.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]], &[0.0; 3]).unwrap();
        assert!((v - 7.0).abs() < 1e-15);
    }

    #[test]
    fn mc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(hypervolume_mc(&[], &[0.0, 0.0], 100, &mut rng).unwrap().value, 0.0);
        let e = hypervolume_mc(&[vec![2.0, 3.0]], &[0.0, 0.0], 100, &mut rng).unwrap();
        assert_eq!((e.value, e.stderr), (6.0, 0.0));
    }

    fn er(v: &[f64]) -> ExpectedReward {
        ExpectedReward {
            label: String::new(),
            values: v.to_vec(),
            ess: vec![],
        }
    }

    #[test]
    fn checkpoint_front_selection() {
        let one = checkpoint_front(&[er(&[1.0, 1.0])], None).unwrap();
        assert_eq!((one.front.clone(), one.selected.clone()), (vec![0], vec![0]));
        let two = checkpoint_front(&[er(&[1.0, 2.0]), er(&[2.0, 1.0])], None).unwrap();
        assert_eq!(two.selected, vec![0, 1]);
        let cands = [
            er(&[0.0, 5.0]),
            er(&[1.0, 4.5]),
            er(&[3.0, 3.0]),
            er(&[1.0, 1.0]),
            er(&[5.0, 0.0]),
        ];
        let r = [0.0, 0.0];
        let f = checkpoint_front(&cands, Some(&r)).unwrap();
        assert_eq!(f.front, vec![0, 1, 2, 4]);
        let mut best = (0.0, vec![]);
        for a in 0..5 {
            for b in a + 1..5 {
                let v = hypervolume(&[cands[a].values.clone(), cands[b].values.clone()], &r).unwrap();
                if v > best.0 {
                    best = (v, vec![a, b]);
                }
            }
        }
        assert_eq!(f.selected, best.1);
    }
}
