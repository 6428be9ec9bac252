//! Synthetic reward landscapes over mutational neighborhoods of random wild
//! types, and the concave candidate front.
//!
//! Each objective is a random linear function of unigram and bigram counts,
//! so the Markov policy can represent the reward-optimal shifts. The raw
//! scores are whitened over the generated items, mixed with an
//! equicorrelation factor to hit the target rank correlation, and perturbed
//! by Gaussian noise.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ContextGroup, Item, RewardDataset, Token, Vocabulary};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontShape {
    #[default]
    Convex,
    /// Rewards are exponentiated, bending the attainable front inward.
    Concave,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k: usize,
    /// Target Spearman correlation between every pair of objectives.
    pub correlation: f64,
    pub shape: FrontShape,
    pub n_contexts: usize,
    pub items_per_context: usize,
    pub seq_len: usize,
    pub alphabet: String,
    /// Standard deviation of the observation noise relative to unit-variance signal.
    pub noise: f64,
    /// Variants carry between 1 and `max_mutations` substitutions of their wild type.
    pub max_mutations: usize,
    /// Fraction of each context held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            k: 2,
            correlation: -0.8,
            shape: FrontShape::Convex,
            n_contexts: 4,
            items_per_context: 60,
            seq_len: 12,
            alphabet: "ACDEFGHIKL".into(),
            noise: 0.1,
            max_mutations: 4,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_contexts == 0 || self.items_per_context < 2 || self.seq_len == 0 {
            return Err(invalid("k, n_contexts, seq_len must be >= 1 and items_per_context >= 2"));
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(invalid(format!("correlation must be in [-1, 1], got {}", self.correlation)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("noise must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(invalid("test_fraction must be in [0, 1)"));
        }
        if self.max_mutations == 0 || self.max_mutations > self.seq_len {
            return Err(invalid("max_mutations must be in [1, seq_len]"));
        }
        if self.alphabet.chars().count() < 2 {
            return Err(invalid("the alphabet needs at least two letters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: RewardDataset,
    /// `None` when `test_fraction` leaves no held-out items.
    pub test: Option<RewardDataset>,
    /// Wild type of each context, in context order.
    pub wild_types: Vec<Vec<Token>>,
}

/// Pearson correlation of the latent Gaussian giving Spearman `s`.
pub fn pearson_for_spearman(s: f64) -> f64 {
    2.0 * (std::f64::consts::PI * s / 6.0).sin()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn mutate<R: Rng>(wt: &[Token], letters: usize, n_mut: usize, rng: &mut R) -> Vec<Token> {
    let mut s = wt.to_vec();
    let positions = rand::seq::index::sample(rng, wt.len(), n_mut);
    for p in positions {
        let shift = rng.gen_range(1..letters) as Token;
        s[p] = (s[p] + shift) % letters as Token;
    }
    s
}

/// Generates train and test splits of a seeded synthetic landscape.
pub fn gen_landscape(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let vocab = Vocabulary::new(spec.alphabet.chars())?;
    let a = vocab.n_letters();
    let k = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // equicorrelation of the noiseless signal so that adding noise lands on target
    let target = pearson_for_spearman(spec.correlation);
    let c = target * (1.0 + spec.noise * spec.noise);
    let mix = if k == 1 {
        DMatrix::from_element(1, 1, 1.0)
    } else {
        if c.abs() > 1.0 || c < -1.0 / (k as f64 - 1.0) {
            return Err(invalid(format!(
                "correlation {} is infeasible for {k} objectives with noise {}",
                spec.correlation, spec.noise
            )));
        }
        let mut m = DMatrix::from_element(k, k, c);
        m.fill_diagonal(1.0);
        // c = 1 is singular; nudge inside the cone
        if c >= 1.0 {
            m.fill_diagonal(1.0 + 1e-12);
        }
        m.cholesky()
            .ok_or_else(|| invalid(format!("correlation {} is infeasible for {k} objectives", spec.correlation)))?
            .l()
    };

    let unigram: Vec<Vec<f64>> = (0..k).map(|_| (0..a).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let bigram: Vec<Vec<f64>> = (0..k).map(|_| (0..a * a).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let score = |i: usize, s: &[Token]| -> f64 {
        let u: f64 = s.iter().map(|&t| unigram[i][t as usize]).sum();
        let b: f64 = s.windows(2).map(|w| bigram[i][w[0] as usize * a + w[1] as usize]).sum();
        u + b
    };

    let mut wild_types = Vec::with_capacity(spec.n_contexts);
    let mut seqs: Vec<Vec<Vec<Token>>> = Vec::with_capacity(spec.n_contexts);
    for _ in 0..spec.n_contexts {
        let wt: Vec<Token> = (0..spec.seq_len).map(|_| rng.gen_range(0..a) as Token).collect();
        let mut seen = HashSet::new();
        let mut group = Vec::with_capacity(spec.items_per_context);
        let mut attempts = 0;
        while group.len() < spec.items_per_context {
            attempts += 1;
            if attempts > 1000 * spec.items_per_context {
                return Err(invalid("too few distinct variants for the requested items_per_context"));
            }
            let n_mut = rng.gen_range(1..=spec.max_mutations);
            let v = mutate(&wt, a, n_mut, &mut rng);
            if seen.insert(v.clone()) {
                group.push(v);
            }
        }
        wild_types.push(wt);
        seqs.push(group);
    }

    // whiten raw scores over all items
    let all: Vec<&Vec<Token>> = seqs.iter().flatten().collect();
    let n = all.len();
    let mut f = DMatrix::from_fn(n, k, |r, i| score(i, all[r]));
    for i in 0..k {
        let mut col = f.column_mut(i);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = f.transpose() * &f / n as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("reward features are collinear; increase items or sequence length".into()))?;
    let white = chol
        .l()
        .solve_lower_triangular(&f.transpose())
        .ok_or_else(|| Error::Numerical("whitening failed".into()))?;
    let signal = &mix * white;

    let mut row = 0;
    let mut train_groups = Vec::with_capacity(spec.n_contexts);
    let mut test_groups = Vec::with_capacity(spec.n_contexts);
    for (m, group) in seqs.into_iter().enumerate() {
        let mut items: Vec<Item> = group
            .into_iter()
            .map(|s| {
                let rewards = (0..k)
                    .map(|i| {
                        let eps: f64 = rng.sample(StandardNormal);
                        let r = signal[(i, row)] + spec.noise * eps;
                        match spec.shape {
                            FrontShape::Convex => r,
                            FrontShape::Concave => r.exp(),
                        }
                    })
                    .collect();
                row += 1;
                Item { sequence: s, rewards }
            })
            .collect();
        items.shuffle(&mut rng);
        let n_test = ((items.len() as f64) * spec.test_fraction).round() as usize;
        let n_test = n_test.min(items.len() - 2);
        let test_items = items.split_off(items.len() - n_test);
        let id = format!("ctx{m}");
        train_groups.push(ContextGroup {
            context_id: id.clone(),
            prompt: vec![],
            items,
        });
        if !test_items.is_empty() {
            test_groups.push(ContextGroup {
                context_id: id,
                prompt: vec![],
                items: test_items,
            });
        }
    }
    let names: Vec<String> = (0..k).map(|i| format!("r{i}")).collect();
    Ok(SyntheticData {
        train: RewardDataset::new(names.clone(), vocab.clone(), train_groups)?,
        test: if test_groups.is_empty() {
            None
        } else {
            Some(RewardDataset::new(names, vocab, test_groups)?)
        },
        wild_types,
    })
}

impl SyntheticData {
    /// Writes `train.csv` and `test.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.train.save_csv(dir.join("train.csv"))?;
        if let Some(test) = &self.test {
            test.save_csv(dir.join("test.csv"))?;
        }
        Ok(())
    }
}

/// `n` points `(cos^3 t, sin^3 t)` for `t` evenly spaced on `[0, pi/2]`, with
/// exact endpoints. The front bends toward the origin, so interior points lie
/// in its non-convex region.
pub fn gen_concave_front(n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 3 {
        return Err(invalid(format!("gen_concave_front needs n >= 3, got {n}")));
    }
    Ok((0..n)
        .map(|j| {
            if j == 0 {
                vec![1.0, 0.0]
            } else if j == n - 1 {
                vec![0.0, 1.0]
            } else {
                let t = std::f64::consts::FRAC_PI_2 * j as f64 / (n - 1) as f64;
                vec![t.cos().powi(3), t.sin().powi(3)]
            }
        })
        .collect())
}

/// Wraps reward vectors as one context of distinct placeholder sequences.
pub fn points_dataset(points: &[Vec<f64>]) -> Result<RewardDataset> {
    let k = points.first().map_or(0, Vec::len);
    let vocab = Vocabulary::new("AB".chars())?;
    let width = (usize::BITS - points.len().leading_zeros()).max(1) as usize;
    let items = points
        .iter()
        .enumerate()
        .map(|(i, p)| Item {
            sequence: (0..width).map(|b| ((i >> b) & 1) as Token).collect(),
            rewards: p.clone(),
        })
        .collect();
    RewardDataset::new(
        (0..k).map(|i| format!("r{i}")).collect(),
        vocab,
        vec![ContextGroup {
            context_id: "front".into(),
            prompt: vec![],
            items,
        }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::pareto_indices;

    fn pooled(ds: &RewardDataset, i: usize) -> Vec<f64> {
        ds.groups().iter().flat_map(|g| g.objective(i)).collect()
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!((pearson_for_spearman(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_correlation() {
        let d = gen_landscape(&SyntheticSpec {
            correlation: 1.0,
            noise: 0.0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let s = spearman(&pooled(&d.train, 0), &pooled(&d.train, 1));
        assert!(s > 0.999_999, "{s}");
    }

    #[test]
    fn anti_correlated_target() {
        let d = gen_landscape(&SyntheticSpec {
            correlation: -0.8,
            n_contexts: 10,
            items_per_context: 100,
            test_fraction: 0.0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert_eq!(d.train.n_items(), 1000);
        assert!(d.test.is_none());
        let s = spearman(&pooled(&d.train, 0), &pooled(&d.train, 1));
        assert!((-0.9..=-0.7).contains(&s), "{s}");
    }

    #[test]
    fn splits_keep_contexts() {
        let d = gen_landscape(&SyntheticSpec {
            n_contexts: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert_eq!(d.train.groups().len(), 2);
        let test = d.test.as_ref().unwrap();
        assert_eq!(test.groups().len(), 2);
        for (tr, te) in d.train.groups().iter().zip(test.groups()) {
            assert_eq!(tr.context_id, te.context_id);
            assert_eq!(tr.len() + te.len(), 60);
            let wt = &d.wild_types[d.train.group_index(&tr.context_id).unwrap()];
            for it in tr.items.iter().chain(&te.items) {
                let h = it.sequence.iter().zip(wt).filter(|(a, b)| a != b).count();
                assert!((1..=4).contains(&h));
            }
        }
    }

    #[test]
    fn reproducible_and_infeasible() {
        let a = gen_landscape(&SyntheticSpec::default()).unwrap();
        let b = gen_landscape(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let bad = SyntheticSpec {
            k: 3,
            correlation: -0.9,
            ..SyntheticSpec::default()
        };
        assert!(gen_landscape(&bad).is_err());
    }

    #[test]
    fn concave_front_properties() {
        let pts = gen_concave_front(11).unwrap();
        assert_eq!(pts[0], vec![1.0, 0.0]);
        assert_eq!(pts[10], vec![0.0, 1.0]);
        assert_eq!(pareto_indices(&pts), (0..11).collect::<Vec<_>>());
        for j in 1..10 {
            // the neighbors' chord passes strictly above-right of the point
            let (a, b, p) = (&pts[j - 1], &pts[j + 1], &pts[j]);
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            assert!(cross > 0.0, "point {j} is not below its chord");
        }
        assert!(gen_concave_front(2).is_err());
    }
}
