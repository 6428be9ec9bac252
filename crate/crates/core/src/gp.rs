//! Gaussian-process reward models: Matérn 5/2 kernel with a constant mean,
//! hyperpriors, MAP fitting by L-BFGS, exact posteriors, and quasi-Monte
//! Carlo expected hypervolume of candidate sets.
//!
//! Hyperparameters are optimized as `theta = (log l, log sf2, m, log sn2)`.
//! Prior densities are evaluated at the raw values.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::{Token, Vocabulary};
use crate::error::{invalid, Error, Result};
use crate::evaluate::hypervolume;
use crate::optim::{minimize, LbfgsOptions};
use crate::parallel;
use crate::qmc::sobol_normals;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Diagonal jitter tried in order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Unigram and bigram counts, each normalized by the number of positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    letters: usize,
}

impl FeatureMap {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self {
            letters: vocab.n_letters(),
        }
    }

    pub fn dim(&self) -> usize {
        self.letters + self.letters * self.letters
    }

    pub fn features(&self, seq: &[Token]) -> Vec<f64> {
        let a = self.letters;
        let mut f = vec![0.0; self.dim()];
        if seq.is_empty() {
            return f;
        }
        let n1 = 1.0 / seq.len() as f64;
        for &t in seq {
            f[t as usize] += n1;
        }
        if seq.len() > 1 {
            let n2 = 1.0 / (seq.len() - 1) as f64;
            for w in seq.windows(2) {
                f[a + w[0] as usize * a + w[1] as usize] += n2;
            }
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub mean: f64,
    pub noise_var: f64,
}

impl Hyperparameters {
    pub fn to_theta(&self) -> [f64; 4] {
        [self.lengthscale.ln(), self.signal_var.ln(), self.mean, self.noise_var.ln()]
    }

    pub fn from_theta(t: &[f64]) -> Self {
        Self {
            lengthscale: t[0].exp(),
            signal_var: t[1].exp(),
            mean: t[2],
            noise_var: t[3].exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    /// LogNormal location and scale of the lengthscale.
    pub lengthscale_loc: f64,
    pub lengthscale_scale: f64,
    /// Gamma shape and rate of the signal variance.
    pub signal_shape: f64,
    pub signal_rate: f64,
    /// Normal standard deviation of the constant mean (centered at 0).
    pub mean_sd: f64,
    /// Gamma shape and rate of the noise variance.
    pub noise_shape: f64,
    pub noise_rate: f64,
}

impl HyperPriors {
    /// Defaults for inputs of dimension `d`.
    pub fn for_dim(d: usize) -> Self {
        Self {
            lengthscale_loc: std::f64::consts::SQRT_2 + (d as f64).ln() / 2.0,
            lengthscale_scale: 3f64.sqrt(),
            signal_shape: 5.0,
            signal_rate: 5.0,
            mean_sd: 3.0,
            noise_shape: 1.1,
            noise_rate: 0.5,
        }
    }

    /// Sum of the four log densities and its gradient in `theta`.
    pub fn log_density(&self, h: &Hyperparameters) -> (f64, [f64; 4]) {
        let (mu, s) = (self.lengthscale_loc, self.lengthscale_scale);
        let ll = h.lengthscale.ln();
        let lp_l = -ll - (s * (2.0 * std::f64::consts::PI).sqrt()).ln() - (ll - mu).powi(2) / (2.0 * s * s);
        let d_l = -1.0 - (ll - mu) / (s * s);

        let gamma = |x: f64, a: f64, b: f64| (a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x, (a - 1.0) - b * x);
        let (lp_f, d_f) = gamma(h.signal_var, self.signal_shape, self.signal_rate);
        let (lp_n, d_n) = gamma(h.noise_var, self.noise_shape, self.noise_rate);

        let v = self.mean_sd * self.mean_sd;
        let lp_m = -0.5 * (LN_2PI + v.ln()) - h.mean * h.mean / (2.0 * v);
        let d_m = -h.mean / v;
        (lp_l + lp_f + lp_m + lp_n, [d_l, d_f, d_m, d_n])
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sf2 * (1 + r + r^2 / 3) * exp(-r)` with `r = sqrt(5) * |x - x'| / l`.
pub fn matern52(x: &[f64], xp: &[f64], lengthscale: f64, signal_var: f64) -> f64 {
    let r = SQRT5 * sq_dist(x, xp).sqrt() / lengthscale;
    signal_var * (1.0 + r + r * r / 3.0) * (-r).exp()
}

fn kernel_matrix(a: &[Vec<f64>], b: &[Vec<f64>], h: &Hyperparameters) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| matern52(&a[i], &b[j], h.lengthscale, h.signal_var))
}

/// Cholesky of `m + jitter * I` for the first jitter on the ladder that works.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &j in &JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += j;
        }
        if let Some(c) = a.cholesky() {
            if c.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok((c, j));
            }
        }
    }
    Err(Error::Numerical(format!(
        "matrix of size {} is not positive definite after jitter {}",
        m.nrows(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Log marginal likelihood plus log prior and the gradient in `theta`.
pub fn log_posterior_density(
    x: &[Vec<f64>],
    y: &[f64],
    h: &Hyperparameters,
    priors: Option<&HyperPriors>,
) -> Result<(f64, [f64; 4])> {
    let n = y.len();
    if x.len() != n || n == 0 {
        return Err(invalid("GP inputs and targets must be non-empty and of equal length"));
    }
    let mut dists = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let d = sq_dist(&x[i], &x[j]).sqrt();
            dists[(i, j)] = d;
            dists[(j, i)] = d;
        }
    }
    let r = dists.map(|d| SQRT5 * d / h.lengthscale);
    let base = r.map(|r| (1.0 + r + r * r / 3.0) * (-r).exp());
    let mut k = &base * h.signal_var;
    for i in 0..n {
        k[(i, i)] += h.noise_var;
    }
    let (chol, _) = cholesky_with_jitter(&k)?;
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - h.mean));
    let alpha = chol.solve(&resid);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;

    // 0.5 * tr((alpha alpha^T - K^-1) dK)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let half_trace = |dk: &DMatrix<f64>| 0.5 * w.component_mul(dk).sum();
    let dk_ls = r.map(|r| h.signal_var * (r * r / 3.0) * (1.0 + r) * (-r).exp());
    let dk_sf = &base * h.signal_var;
    let g_ls = half_trace(&dk_ls);
    let g_sf = half_trace(&dk_sf);
    let g_noise = 0.5 * h.noise_var * w.diagonal().sum();
    let g_mean = alpha.sum();
    let mut grad = [g_ls, g_sf, g_mean, g_noise];
    let mut value = lml;
    if let Some(p) = priors {
        let (lp, dlp) = p.log_density(h);
        value += lp;
        for (g, d) in grad.iter_mut().zip(dlp) {
            *g += d;
        }
    }
    Ok((value, grad))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    pub hyper: Hyperparameters,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Log posterior density at `hyper`, when fitted.
    pub objective: Option<f64>,
    #[serde(skip)]
    factor: Option<(Cholesky<f64, Dyn>, DVector<f64>)>,
}

impl GpModel {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: Hyperparameters) -> Result<Self> {
        let mut m = Self {
            hyper,
            x,
            y,
            objective: None,
            factor: None,
        };
        m.refactor()?;
        Ok(m)
    }

    /// Recomputes the cached factorization (after deserialization or edits).
    pub fn refactor(&mut self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.is_empty() {
            return Err(invalid("GP inputs and targets must be non-empty and of equal length"));
        }
        let h = &self.hyper;
        if !(h.lengthscale > 0.0 && h.signal_var > 0.0 && h.noise_var >= 0.0 && h.mean.is_finite()) {
            return Err(invalid(format!("invalid GP hyperparameters {h:?}")));
        }
        let mut k = kernel_matrix(&self.x, &self.x, h);
        for i in 0..k.nrows() {
            k[(i, i)] += h.noise_var;
        }
        let (chol, _) = cholesky_with_jitter(&k)?;
        let resid = DVector::from_iterator(self.y.len(), self.y.iter().map(|v| v - h.mean));
        let alpha = chol.solve(&resid);
        self.factor = Some((chol, alpha));
        Ok(())
    }

    fn factor(&self) -> Result<&(Cholesky<f64, Dyn>, DVector<f64>)> {
        self.factor.as_ref().ok_or_else(|| invalid("GP model is not factorized; call refactor"))
    }

    /// Posterior mean and covariance of the latent function at `xq`
    /// (plus observation noise on the diagonal when `include_noise`).
    pub fn posterior_with(&self, xq: &[Vec<f64>], include_noise: bool) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (chol, alpha) = self.factor()?;
        let kxq = kernel_matrix(&self.x, xq, &self.hyper);
        let mean: Vec<f64> = (kxq.transpose() * alpha).iter().map(|v| v + self.hyper.mean).collect();
        let v = chol.l().solve_lower_triangular(&kxq).ok_or_else(|| Error::Numerical("triangular solve".into()))?;
        let mut cov = kernel_matrix(xq, xq, &self.hyper) - v.transpose() * v;
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..cov.nrows() {
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
            if include_noise {
                cov[(i, i)] += self.hyper.noise_var;
            }
        }
        Ok((mean, cov))
    }

    pub fn posterior(&self, xq: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.posterior_with(xq, false)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: GpModel = serde_json::from_str(s)?;
        m.refactor()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub restarts: usize,
    pub lbfgs_max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            lbfgs_max_iter: 200,
        }
    }
}

/// MAP hyperparameters by L-BFGS from several starting points; the first
/// start is deterministic, the rest are drawn around it.
pub fn fit_map<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[f64],
    priors: &HyperPriors,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<GpModel> {
    if y.len() < 2 || x.len() != y.len() {
        return Err(invalid("fit_map needs at least two targets with matching inputs"));
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data".into()));
    }
    let restarts = opts.restarts.max(1);
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let yvar = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n;
    let first = Hyperparameters {
        lengthscale: priors.lengthscale_loc.exp().min(max_pairwise_distance(x).max(1e-3)),
        signal_var: yvar.max(0.1),
        mean: ybar,
        noise_var: (0.1 * yvar).max(1e-3),
    }
    .to_theta();
    let starts: Vec<[f64; 4]> = (0..restarts)
        .map(|i| {
            if i == 0 {
                first
            } else {
                let mut t = first;
                t[0] += rng.gen_range(-1.5..1.5);
                t[1] += rng.gen_range(-1.5..1.5);
                t[2] += rng.gen_range(-1.0..1.0) * yvar.sqrt().max(0.1);
                t[3] += rng.gen_range(-2.0..2.0);
                t
            }
        })
        .collect();
    let lbfgs = LbfgsOptions {
        max_iter: opts.lbfgs_max_iter,
        ..LbfgsOptions::default()
    };
    let neg = |t: &[f64]| -> Option<(f64, Vec<f64>)> {
        if t.iter().any(|v| v.abs() > 30.0) {
            return None;
        }
        let (v, g) = log_posterior_density(x, y, &Hyperparameters::from_theta(t), Some(priors)).ok()?;
        Some((-v, g.iter().map(|d| -d).collect()))
    };
    let results = parallel::map(&starts, |s| minimize(neg, s, &lbfgs));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(r) => {
                if best.as_ref().map_or(true, |b| r.f < b.0) {
                    best = Some((r.f, r.x));
                }
            }
            None => log::warn!("GP restart {i} could not be evaluated at its starting point"),
        }
    }
    let (f, theta) = best.ok_or_else(|| Error::Numerical(format!("all {restarts} GP restarts failed")))?;
    let mut model = GpModel::new(x.to_vec(), y.to_vec(), Hyperparameters::from_theta(&theta))?;
    model.objective = Some(-f);
    Ok(model)
}

fn max_pairwise_distance(x: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..x.len() {
        for j in 0..i {
            m = m.max(sq_dist(&x[i], &x[j]));
        }
    }
    m.sqrt()
}

/// Expected-hypervolume protocol constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EhvProtocol {
    pub subset_sizes: Vec<usize>,
    pub n_qmc: usize,
    pub n_repeats: usize,
    /// Sample observations rather than the latent function.
    pub include_noise: bool,
}

impl Default for EhvProtocol {
    fn default() -> Self {
        Self {
            subset_sizes: vec![4, 8, 16, 32],
            n_qmc: 64,
            n_repeats: 20,
            include_noise: false,
        }
    }
}

impl EhvProtocol {
    pub fn published() -> Self {
        Self {
            subset_sizes: vec![12, 24, 48, 96, 192, 384],
            n_qmc: 256,
            n_repeats: 100,
            include_noise: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhvRow {
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation across repeats.
    pub std: f64,
}

/// Lower Cholesky factor, or zero when the covariance vanishes.
fn sampling_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.diagonal().iter().all(|d| *d <= 1e-300) {
        return Ok(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    Ok(cholesky_with_jitter(cov)?.0.l())
}

/// QMC estimate of the expected hypervolume of the joint posterior over one
/// candidate set, given one `(mean, cov)` per objective.
pub fn qmc_hypervolume<R: Rng + ?Sized>(
    posteriors: &[(Vec<f64>, DMatrix<f64>)],
    reference: &[f64],
    n_qmc: usize,
    rng: &mut R,
) -> Result<f64> {
    let n_obj = posteriors.len();
    if n_obj != reference.len() || n_obj == 0 {
        return Err(invalid("one posterior per reference coordinate is required"));
    }
    if n_qmc < 2 {
        return Err(invalid("n_qmc must be >= 2"));
    }
    let k = posteriors[0].0.len();
    let factors: Vec<DMatrix<f64>> = posteriors.iter().map(|(_, c)| sampling_factor(c)).collect::<Result<_>>()?;
    let z = sobol_normals(k * n_obj, n_qmc, rng)?;
    let mut total = 0.0;
    for zs in &z {
        let mut points = vec![vec![0.0; n_obj]; k];
        for (j, ((mean, _), l)) in posteriors.iter().zip(&factors).enumerate() {
            let zj = DVector::from_column_slice(&zs[j * k..(j + 1) * k]);
            let s = l * zj;
            for i in 0..k {
                points[i][j] = mean[i] + s[i];
            }
        }
        total += hypervolume(&points, reference)?;
    }
    Ok(total / n_qmc as f64)
}

/// For each subset size: repeatedly draw that many candidates uniformly, and
/// average the QMC expected hypervolume over repeats.
pub fn expected_hypervolume<R: Rng + ?Sized>(
    models: &[GpModel],
    candidates: &[Vec<f64>],
    protocol: &EhvProtocol,
    reference: &[f64],
    rng: &mut R,
) -> Result<Vec<EhvRow>> {
    if candidates.is_empty() {
        return Err(invalid("no candidate sequences"));
    }
    if models.len() != reference.len() {
        return Err(invalid("one GP model per objective is required"));
    }
    if protocol.n_repeats == 0 {
        return Err(invalid("n_repeats must be >= 1"));
    }
    let mut rows = Vec::with_capacity(protocol.subset_sizes.len());
    for &k in &protocol.subset_sizes {
        if k == 0 || k > candidates.len() {
            return Err(invalid(format!("subset size {k} with {} candidates", candidates.len())));
        }
        let seeds: Vec<u64> = (0..protocol.n_repeats).map(|_| rng.gen()).collect();
        let values: Vec<f64> = parallel::map(&seeds, |&seed| -> Result<f64> {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut subset = index::sample(&mut r, candidates.len(), k).into_vec();
            subset.sort_unstable();
            let xq: Vec<Vec<f64>> = subset.iter().map(|&i| candidates[i].clone()).collect();
            let posts = models
                .iter()
                .map(|m| m.posterior_with(&xq, protocol.include_noise))
                .collect::<Result<Vec<_>>>()?;
            qmc_hypervolume(&posts, reference, protocol.n_qmc, &mut r)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(EhvRow { k, mean, std });
    }
    Ok(rows)
}
