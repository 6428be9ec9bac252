#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcheby::dataset::{ContextGroup, Item};
use tcheby::losses::{build_pairs, LossReport, PreferencePair};
use tcheby::{RewardDataset, SequencePolicy, Vocabulary};

/// One context of `n` random short sequences with `k` rewards in [-2, 2],
/// plus two random policies.
pub fn toy_group(k: usize, n: usize, seed: u64) -> (RewardDataset, SequencePolicy, SequencePolicy) {
    let vocab = Vocabulary::new("ABCD".chars()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|_| Item {
            sequence: (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..4)).collect(),
            rewards: (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect();
    let ds = RewardDataset::new(
        (0..k).map(|i| format!("r{i}")).collect(),
        vocab.clone(),
        vec![ContextGroup {
            context_id: "x".into(),
            prompt: vec![],
            items,
        }],
    )
    .unwrap();
    let mut p = SequencePolicy::uniform(&vocab, 6);
    let mut p0 = p.clone();
    for x in p.params_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    for x in p0.params_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    (ds, p, p0)
}

/// Every ordered pair with `r_w > r_l + delta`.
pub fn all_pairs(rewards: &[f64], delta: f64) -> Vec<PreferencePair> {
    build_pairs(0, rewards, delta, usize::MAX, &mut ChaCha8Rng::seed_from_u64(0))
}

/// Max-abs gradient error relative to the largest central difference.
pub fn fd_relative_error(policy: &SequencePolicy, f: impl Fn(&SequencePolicy) -> LossReport) -> f64 {
    let g = f(policy).gradient;
    let h = 1e-5;
    let mut fd = vec![0.0; policy.n_params()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let mut a = policy.clone();
        a.params_mut()[i] += h;
        let mut b = policy.clone();
        b.params_mut()[i] -= h;
        *slot = (f(&a).loss - f(&b).loss) / (2.0 * h);
    }
    let scale = fd.iter().fold(1e-8f64, |m, x| m.max(x.abs()));
    let err = g.0.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}

/// All sequences of length `len` over `letters` tokens, in lexicographic order.
pub fn all_sequences(letters: u32, len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..letters).map(move |t| {
                    let mut s = s.clone();
                    s.push(t);
                    s
                })
            })
            .collect();
    }
    out
}
