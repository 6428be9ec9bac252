//! A context-conditioned first-order Markov sequence model standing in for an
//! autoregressive language model.
//!
//! Each parameter block holds one logits row for the sequence start and one
//! row per letter; every row scores the next emission over `letters + EOS`.
//! A non-empty prompt starts the chain from the row of its last letter.
//! Sequences of length `max_len` terminate without an EOS emission.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ContextGroup, RewardDataset, Token, Vocabulary};
use crate::error::{invalid, Error, Result};
use crate::numeric::{logsumexp, softmax};

/// The conditioning context of a sequence.
#[derive(Clone, Copy, Debug)]
pub struct Context<'a> {
    pub id: &'a str,
    pub prompt: &'a [Token],
}

impl<'a> Context<'a> {
    pub fn new(id: &'a str, prompt: &'a [Token]) -> Self {
        Self { id, prompt }
    }

    pub fn empty() -> Context<'static> {
        Context { id: "", prompt: &[] }
    }
}

impl<'a> From<&'a ContextGroup> for Context<'a> {
    fn from(g: &'a ContextGroup) -> Self {
        Context {
            id: &g.context_id,
            prompt: &g.prompt,
        }
    }
}

/// Gradient buffer with the same layout as the policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.0 {
            *g *= c;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, c: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

const FORMAT: &str = "tcheby-policy";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencePolicy {
    format: String,
    version: u32,
    alphabet: String,
    max_len: usize,
    n_blocks: usize,
    /// Context id to parameter block; unknown contexts use block 0.
    context_blocks: BTreeMap<String, usize>,
    params: Vec<f64>,
    #[serde(skip)]
    vocab: Option<Vocabulary>,
}

impl SequencePolicy {
    /// All-zero logits (uniform emissions) with a single shared block.
    pub fn uniform(vocab: &Vocabulary, max_len: usize) -> Self {
        Self::with_blocks(vocab, max_len, 1, BTreeMap::new())
    }

    pub fn with_blocks(vocab: &Vocabulary, max_len: usize, n_blocks: usize, context_blocks: BTreeMap<String, usize>) -> Self {
        assert!(n_blocks >= 1, "at least one parameter block");
        assert!(context_blocks.values().all(|&b| b < n_blocks), "block index out of range");
        let e = vocab.n_letters() + 1;
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            alphabet: vocab.alphabet_string(),
            max_len,
            n_blocks,
            context_blocks,
            params: vec![0.0; n_blocks * e * e],
            vocab: Some(vocab.clone()),
        }
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
            .clone()
            .unwrap_or_else(|| Vocabulary::new(self.alphabet.chars()).expect("validated on load"))
    }

    pub fn n_letters(&self) -> usize {
        self.alphabet.chars().count()
    }

    /// Emission alphabet size: letters plus EOS.
    fn n_emit(&self) -> usize {
        self.n_letters() + 1
    }

    fn eos(&self) -> usize {
        self.n_letters()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block_of(&self, ctx: &Context<'_>) -> usize {
        self.context_blocks.get(ctx.id).copied().unwrap_or(0)
    }

    /// Offset of the logits row scoring the emission after `prev`
    /// (`None` is the sequence start).
    fn row_offset(&self, block: usize, prev: Option<Token>) -> usize {
        let e = self.n_emit();
        let row = match prev {
            None => 0,
            Some(t) => t as usize + 1,
        };
        block * e * e + row * e
    }

    fn row(&self, block: usize, prev: Option<Token>) -> &[f64] {
        let off = self.row_offset(block, prev);
        &self.params[off..off + self.n_emit()]
    }

    fn start(&self, ctx: &Context<'_>) -> Option<Token> {
        ctx.prompt.last().copied()
    }

    fn check(&self, ctx: &Context<'_>, seq: &[Token]) -> Result<()> {
        let letters = self.n_letters();
        if let Some(&token) = seq.iter().chain(ctx.prompt).find(|&&t| t as usize >= letters) {
            return Err(Error::InvalidToken { token, letters });
        }
        if seq.len() > self.max_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max_len: self.max_len,
            });
        }
        Ok(())
    }

    /// `(row predecessor, emitted index)` for every emission of `seq`, including EOS.
    fn emissions(&self, ctx: &Context<'_>, seq: &[Token]) -> Vec<(Option<Token>, usize)> {
        let mut out = Vec::with_capacity(seq.len() + 1);
        let mut prev = self.start(ctx);
        for &t in seq {
            out.push((prev, t as usize));
            prev = Some(t);
        }
        if seq.len() < self.max_len {
            out.push((prev, self.eos()));
        }
        out
    }

    /// Exact `log pi(seq | ctx)`.
    pub fn log_prob(&self, ctx: &Context<'_>, seq: &[Token]) -> Result<f64> {
        self.check(ctx, seq)?;
        let block = self.block_of(ctx);
        Ok(self
            .emissions(ctx, seq)
            .into_iter()
            .map(|(prev, c)| {
                let row = self.row(block, prev);
                row[c] - logsumexp(row)
            })
            .sum())
    }

    /// Adds `scale * d log_prob / d params` into `grad` and returns the log-probability.
    pub fn accumulate_log_prob_grad(&self, ctx: &Context<'_>, seq: &[Token], scale: f64, grad: &mut Gradient) -> Result<f64> {
        self.check(ctx, seq)?;
        let block = self.block_of(ctx);
        let mut lp = 0.0;
        for (prev, c) in self.emissions(ctx, seq) {
            let off = self.row_offset(block, prev);
            let row = &self.params[off..off + self.n_emit()];
            let lse = logsumexp(row);
            lp += row[c] - lse;
            for (j, &logit) in row.iter().enumerate() {
                let p = (logit - lse).exp();
                let onehot = if j == c { 1.0 } else { 0.0 };
                grad.0[off + j] += scale * (onehot - p);
            }
        }
        Ok(lp)
    }

    pub fn log_prob_grad(&self, ctx: &Context<'_>, seq: &[Token]) -> Result<Gradient> {
        let mut g = Gradient::zeros(self.n_params());
        self.accumulate_log_prob_grad(ctx, seq, 1.0, &mut g)?;
        Ok(g)
    }

    /// Next-emission probabilities after `prev` (letters then EOS) at `temperature`.
    pub fn next_distribution(&self, ctx: &Context<'_>, prev: Option<Token>, temperature: f64) -> Vec<f64> {
        let row = self.row(self.block_of(ctx), prev);
        let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
        softmax(&scaled)
    }

    /// Ancestral sample with temperature and nucleus (top-p) truncation.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &Context<'_>, temperature: f64, top_p: f64, rng: &mut R) -> Result<Vec<Token>> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(invalid(format!("temperature must be > 0, got {temperature}")));
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(invalid(format!("top_p must be in (0, 1], got {top_p}")));
        }
        let mut seq = Vec::new();
        let mut prev = self.start(ctx);
        while seq.len() < self.max_len {
            let probs = nucleus(&self.next_distribution(ctx, prev, temperature), top_p);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut choice = probs.last().map(|&(i, _)| i).unwrap_or(self.eos());
            for &(i, p) in &probs {
                acc += p;
                if u < acc {
                    choice = i;
                    break;
                }
            }
            if choice == self.eos() {
                break;
            }
            seq.push(choice as Token);
            prev = Some(choice as Token);
        }
        Ok(seq)
    }

    /// Gradient of `E(y) = -log pi(y|x)` with respect to a relaxed one-hot
    /// encoding of `seq`, evaluated at the one-hot point. The relaxation is
    /// bilinear in consecutive positions with row log-softmax weights held
    /// fixed. Returns an `L x letters` row-major matrix.
    pub fn energy_grad_onehot(&self, ctx: &Context<'_>, seq: &[Token]) -> Result<Vec<f64>> {
        self.check(ctx, seq)?;
        let a = self.n_letters();
        let block = self.block_of(ctx);
        let log_softmax = |prev: Option<Token>| -> Vec<f64> {
            let row = self.row(block, prev);
            let lse = logsumexp(row);
            row.iter().map(|x| x - lse).collect()
        };
        let rows: Vec<Vec<f64>> = (0..=a).map(|r| log_softmax(if r == 0 { None } else { Some(r as Token - 1) })).collect();
        let row_of = |prev: Option<Token>| match prev {
            None => &rows[0],
            Some(t) => &rows[t as usize + 1],
        };
        let l = seq.len();
        let mut grad = vec![0.0; l * a];
        for t in 0..l {
            let prev = if t == 0 { self.start(ctx) } else { Some(seq[t - 1]) };
            let incoming = row_of(prev);
            for v in 0..a {
                let outgoing = if t + 1 < l {
                    rows[v + 1][seq[t + 1] as usize]
                } else if l < self.max_len {
                    rows[v + 1][self.eos()]
                } else {
                    0.0
                };
                grad[t * a + v] = -(incoming[v] + outgoing);
            }
        }
        Ok(grad)
    }

    /// Mean per-emission negative log-likelihood over all dataset sequences.
    pub fn mean_nll(&self, ds: &RewardDataset) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for g in ds.groups() {
            let ctx = Context::from(g);
            for it in &g.items {
                total -= self.log_prob(&ctx, &it.sequence)?;
                count += self.emissions(&ctx, &it.sequence).len();
            }
        }
        Ok(total / count as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<SequencePolicy>(s)?.validated()
    }

    /// Checks a deserialized policy and restores its vocabulary.
    pub fn validated(mut self) -> Result<Self> {
        let p = &mut self;
        if p.format != FORMAT || p.version != FORMAT_VERSION {
            return Err(invalid(format!("unsupported policy format {} v{}", p.format, p.version)));
        }
        let vocab = Vocabulary::new(p.alphabet.chars())?;
        let e = vocab.n_letters() + 1;
        if p.n_blocks == 0 || p.params.len() != p.n_blocks * e * e {
            return Err(invalid("policy parameter shape does not match vocabulary"));
        }
        if p.context_blocks.values().any(|&b| b >= p.n_blocks) {
            return Err(invalid("policy context block out of range"));
        }
        if p.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        p.vocab = Some(vocab);
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Keeps the smallest set of highest-probability entries whose mass reaches
/// `top_p` (at least one), renormalized. Ties keep the lower index first.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push((i, probs[i]));
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    for entry in &mut kept {
        entry.1 /= mass;
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Defaults to the longest dataset sequence.
    pub max_len: Option<usize>,
    /// Give every context its own parameter block.
    pub per_context_blocks: bool,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 2.0,
            max_len: None,
            per_context_blocks: false,
        }
    }
}

/// Full-batch gradient ascent on the mean per-emission log-likelihood,
/// starting from the uniform model.
pub fn mle_pretrain(ds: &RewardDataset, epochs: usize, lr: f64) -> Result<SequencePolicy> {
    mle_pretrain_with(
        ds,
        &PretrainOptions {
            epochs,
            lr,
            ..PretrainOptions::default()
        },
    )
}

pub fn mle_pretrain_with(ds: &RewardDataset, opts: &PretrainOptions) -> Result<SequencePolicy> {
    if ds.n_items() == 0 {
        return Err(Error::Dataset("cannot pretrain on an empty dataset".into()));
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(invalid(format!("learning rate must be > 0, got {}", opts.lr)));
    }
    let max_len = opts.max_len.unwrap_or_else(|| ds.max_sequence_len());
    let mut policy = if opts.per_context_blocks {
        let blocks = ds
            .groups()
            .iter()
            .enumerate()
            .map(|(i, g)| (g.context_id.clone(), i))
            .collect();
        SequencePolicy::with_blocks(ds.vocab(), max_len, ds.groups().len(), blocks)
    } else {
        SequencePolicy::uniform(ds.vocab(), max_len)
    };
    let n_emissions: usize = ds
        .groups()
        .iter()
        .flat_map(|g| {
            let ctx = Context::from(g);
            let policy = &policy;
            g.items.iter().map(move |it| policy.emissions(&ctx, &it.sequence).len())
        })
        .sum();
    let scale = 1.0 / n_emissions as f64;
    for _ in 0..opts.epochs {
        let mut grad = Gradient::zeros(policy.n_params());
        for g in ds.groups() {
            let ctx = Context::from(g);
            for it in &g.items {
                policy.accumulate_log_prob_grad(&ctx, &it.sequence, scale, &mut grad)?;
            }
        }
        for (p, g) in policy.params.iter_mut().zip(&grad.0) {
            *p += opts.lr * g;
        }
    }
    Ok(policy)
}
