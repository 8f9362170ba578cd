//! Numerical validation of the probabilistic account of why random
//! subspaces supply a usable training signal: the closed-form probability
//! that a random subspace carries enough effective features, Monte-Carlo
//! oracles for it, its lower bound as a curve over dimensionality, the
//! usefulness of a whole scale sample, and a measurement of how much
//! inliers outweigh anomalies in accumulated gradient magnitude.

use rand_distr::{Binomial, Distribution, Hypergeometric, StandardNormal};
use thiserror::Error;

use crate::nn::{softmax, Activation, Matrix};
use crate::rng;
use crate::Real;

/// Numeric guard for the closed form; log-space binomials stay accurate
/// well past this, it simply bounds runtime.
pub const MAX_TOTAL_FEATURES: usize = 2000;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("total feature count {f} exceeds the supported maximum {max}")]
    RangeGuard { f: usize, max: usize },
}

/// How likely is a uniformly drawn subspace of a d-dimensional space with
/// `g` effective features out of `f` to contain at least `q` of them?
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubspaceUsefulnessQuery {
    f: usize,
    g: usize,
    q: usize,
}

impl SubspaceUsefulnessQuery {
    pub fn new(f: usize, g: usize, q: usize) -> Result<Self, TheoryError> {
        if f > MAX_TOTAL_FEATURES {
            return Err(TheoryError::RangeGuard {
                f,
                max: MAX_TOTAL_FEATURES,
            });
        }
        if !(1 <= g && g <= f) {
            return Err(TheoryError::InvalidQuery(format!(
                "need 1 <= g <= f, got g={g}, f={f}"
            )));
        }
        if !(1 <= q && q <= g) {
            return Err(TheoryError::InvalidQuery(format!(
                "need 1 <= q <= g, got q={q}, g={g}"
            )));
        }
        Ok(SubspaceUsefulnessQuery { f, g, q })
    }

    /// g = round(beta * f), q = ceil(alpha * g).
    pub fn from_ratios(f: usize, alpha: f64, beta: f64) -> Result<Self, TheoryError> {
        if !(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0) {
            return Err(TheoryError::InvalidQuery(format!(
                "ratios must lie in (0, 1], got alpha={alpha}, beta={beta}"
            )));
        }
        let g = (beta * f as f64).round() as usize;
        let q = (alpha * g as f64).ceil() as usize;
        Self::new(f, g.min(f), q.max(1))
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.q as f64 / self.g as f64
    }

    pub fn beta(&self) -> f64 {
        self.g as f64 / self.f as f64
    }
}

/// Cumulative log-factorial table: table[k] = ln(k!).
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// Exact probability that a subspace of uniform cardinality 1..=f, filled
/// by with-replacement effective/ineffective draws at rate g/f, contains
/// at least q effective features:
/// (1/f) sum_{j=q..f} sum_{k=q..j} C(j,k) (g/f)^k (1-g/f)^(j-k).
/// Binomial terms are evaluated in log space so large f cannot overflow.
pub fn pr_subspace_useful(query: &SubspaceUsefulnessQuery) -> f64 {
    let (f, g, q) = (query.f, query.g, query.q);
    if g == f {
        // Every feature is effective; only cardinality >= q matters.
        return (f - q + 1) as f64 / f as f64;
    }
    let lf = ln_factorials(f);
    let ln_p = (g as f64 / f as f64).ln();
    let ln_1p = ((f - g) as f64 / f as f64).ln();
    let mut total = 0.0;
    for j in q..=f {
        let mut inner = 0.0;
        for k in q..=j {
            let ln_choose = lf[j] - lf[k] - lf[j - k];
            inner += (ln_choose + k as f64 * ln_p + (j - k) as f64 * ln_1p).exp();
        }
        total += inner;
    }
    total / f as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingRegime {
    /// Each of the j slots is independently effective with rate g/f
    /// (the regime the closed form describes).
    WithReplacement,
    /// j distinct features drawn from the f available (what the actual
    /// subspace sampler does); hypergeometric counts.
    WithoutReplacement,
}

#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Monte-Carlo oracle for [`pr_subspace_useful`]: draw a cardinality,
/// count effective features under the chosen regime, tally trials
/// reaching q. Returns the mean with its binomial standard error.
pub fn pr_subspace_useful_mc(
    query: &SubspaceUsefulnessQuery,
    trials: u64,
    seed: u64,
    regime: SamplingRegime,
) -> Result<McEstimate, TheoryError> {
    if trials < 10_000 {
        return Err(TheoryError::InvalidQuery(format!(
            "need at least 10000 trials for a usable estimate, got {trials}"
        )));
    }
    let (f, g, q) = (query.f as u64, query.g as u64, query.q as u64);
    let rate = g as f64 / f as f64;
    let mut r = rng::stream(seed, &[0x7EC4]);
    let mut hits = 0u64;
    for _ in 0..trials {
        let j = 1 + rng::uniform_below(&mut r, f);
        let effective = match regime {
            SamplingRegime::WithReplacement => {
                Binomial::new(j, rate).expect("rate in (0,1]").sample(&mut r)
            }
            SamplingRegime::WithoutReplacement => Hypergeometric::new(f, g, j)
                .expect("g <= f and j <= f by construction")
                .sample(&mut r),
        };
        if effective >= q {
            hits += 1;
        }
    }
    let estimate = hits as f64 / trials as f64;
    let std_error = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(McEstimate {
        estimate,
        std_error,
        trials,
    })
}

/// Worst-case usefulness probability over all dimensionalities: 1 - alpha.
pub fn usefulness_lower_bound(alpha: f64) -> Result<f64, TheoryError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TheoryError::InvalidQuery(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(1.0 - alpha)
}

/// Probability that at least one of the c subspaces of a scale sample is
/// useful, each independently useful with probability at least 1 - alpha.
/// Computed as the binomial sum over k >= 1 successes and cross-checked
/// against its closed form 1 - alpha^c.
pub fn pr_scale_sample_useful(c: usize, alpha: f64) -> Result<f64, TheoryError> {
    if c < 1 {
        return Err(TheoryError::InvalidQuery("c must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TheoryError::InvalidQuery(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let lf = ln_factorials(c);
    let ln_win = (1.0 - alpha).ln();
    let ln_lose = alpha.ln();
    let mut total = 0.0;
    for k in 1..=c {
        let ln_choose = lf[c] - lf[k] - lf[c - k];
        let term = ln_choose + k as f64 * ln_win + (c - k) as f64 * ln_lose;
        total += term.exp();
    }
    let closed = 1.0 - alpha.powi(c as i32);
    assert!(
        (total - closed).abs() <= 1e-12,
        "sum form {total} drifted from closed form {closed}"
    );
    Ok(total)
}

#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub f: usize,
    pub g: usize,
    pub q: usize,
    pub pr: f64,
}

/// Usefulness probability as the total feature count grows with fixed
/// ratios: g = round(beta f), q = ceil(alpha g). Dimensions where the
/// rounded g collapses to zero are skipped.
pub fn usefulness_curve(
    alpha: f64,
    beta: f64,
    f_max: usize,
) -> Result<Vec<CurvePoint>, TheoryError> {
    if f_max > 400 {
        return Err(TheoryError::RangeGuard { f: f_max, max: 400 });
    }
    if !(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0) {
        return Err(TheoryError::InvalidQuery(format!(
            "ratios must lie in (0, 1], got alpha={alpha}, beta={beta}"
        )));
    }
    let mut out = Vec::new();
    for f in 1..=f_max {
        if (beta * f as f64).round() < 1.0 {
            continue;
        }
        let query = SubspaceUsefulnessQuery::from_ratios(f, alpha, beta)?;
        out.push(CurvePoint {
            f,
            g: query.g,
            q: query.q,
            pr: pr_subspace_useful(&query),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct InlierPriorityConfig {
    /// Penultimate layer width feeding the final weights.
    pub u: usize,
    /// Softmax slots.
    pub c: usize,
    pub n_inlier: usize,
    pub n_anom: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct InlierPriorityResult {
    /// mean ||accumulated inlier gradient||^2 / mean ||accumulated
    /// anomaly gradient||^2 over trials.
    pub ratio: f64,
    /// Delta-method standard error of the ratio.
    pub std_error: f64,
    pub mean_inlier: f64,
    pub mean_anom: f64,
    /// Measured E[h_i h_j] for distinct sigmoid units (expected near 1/4).
    pub pair_moment: f64,
    /// Measured E[h_i^2 h_j^2] (expected near 1/16).
    pub pair_square_moment: f64,
}

/// Push a standard-normal input through one random sigmoid layer.
fn sigmoid_activations<Rg: rand_core::RngCore>(v: &Matrix<Real>, r: &mut Rg, out: &mut [Real]) {
    let u = v.rows();
    let x: Vec<Real> = (0..v.cols()).map(|_| StandardNormal.sample(r)).collect();
    for s in 0..u {
        let z: Real = v.row(s).iter().zip(&x).map(|(&w, &xi)| w * xi).sum();
        out[s] = Activation::Sigmoid.apply(z);
    }
}

/// Squared norm of the final-layer gradient accumulated over a group of
/// `n` instances, using the per-slot alignment-loss derivative at uniform
/// targets: d/dw(s,k) = 0.5 ln(2 p_k / (p_k + 1/c)) p_k (1 - p_k) h_s.
fn group_gradient_norm<Rg: rand_core::RngCore>(
    w: &Matrix<Real>,
    v: &Matrix<Real>,
    n: usize,
    r: &mut Rg,
) -> f64 {
    let (u, c) = (w.rows(), w.cols());
    let mut acc = Matrix::<Real>::zeros(u, c);
    let mut h = vec![0.0; u];
    let mut logits = vec![0.0; c];
    for _ in 0..n {
        sigmoid_activations(v, r, &mut h);
        for k in 0..c {
            logits[k] = (0..u).map(|s| w.get(s, k) * h[s]).sum();
        }
        let p = softmax(&logits).expect("nonempty logits");
        for k in 0..c {
            let coeff = 0.5
                * (std::f64::consts::LN_2 + p[k].ln() - (1.0 / c as f64 + p[k]).ln())
                * p[k]
                * (1.0 - p[k]);
            for s in 0..u {
                let cur = acc.get(s, k);
                acc.set(s, k, cur + coeff * h[s]);
            }
        }
    }
    acc.data().iter().map(|&m| m * m).sum()
}

/// Measure how strongly the majority class dominates the accumulated
/// gradient of the final layer. Per trial: fresh final weights uniform in
/// [-1, 1], fresh random sigmoid feeding layer, one inlier-sized and one
/// anomaly-sized group of activations; the reported ratio compares mean
/// squared accumulated-gradient norms. Activation moments are measured
/// first and must land near their nominal values (E[h_i h_j] ~ 1/4,
/// E[h_i^2 h_j^2] ~ 1/16) for the setup to be meaningful.
pub fn inlier_priority(cfg: &InlierPriorityConfig) -> Result<InlierPriorityResult, TheoryError> {
    if cfg.u < 2 || cfg.c < 2 || cfg.n_inlier < 1 || cfg.n_anom < 1 || cfg.trials < 2 {
        return Err(TheoryError::InvalidQuery(
            "u and c must be at least 2, populations at least 1, trials at least 2".into(),
        ));
    }
    if cfg.n_inlier < cfg.n_anom {
        return Err(TheoryError::InvalidQuery(format!(
            "inliers must be the majority: n_inlier={} < n_anom={}",
            cfg.n_inlier, cfg.n_anom
        )));
    }
    let bound = 1.0 / (cfg.u as f64).sqrt();

    // Moment pre-pass over fresh layers and inputs.
    let mut r = rng::stream(cfg.seed, &[0x1F11, 0]);
    let mut pair_sum = 0.0;
    let mut pair_sq_sum = 0.0;
    let mut pairs = 0u64;
    let mut h = vec![0.0; cfg.u];
    for _ in 0..512 {
        let v = random_matrix(cfg.u, cfg.u, bound, &mut r);
        sigmoid_activations(&v, &mut r, &mut h);
        for i in 0..cfg.u {
            for j in (i + 1)..cfg.u {
                pair_sum += h[i] * h[j];
                pair_sq_sum += h[i] * h[i] * h[j] * h[j];
                pairs += 1;
            }
        }
    }
    let pair_moment = pair_sum / pairs as f64;
    let pair_square_moment = pair_sq_sum / pairs as f64;
    assert!(
        (pair_moment - 0.25).abs() < 0.02 && (pair_square_moment - 0.0625).abs() < 0.02,
        "sigmoid activation moments off nominal: E[hh']={pair_moment}, E[h2h'2]={pair_square_moment}"
    );

    let mut s_in = Vec::with_capacity(cfg.trials);
    let mut s_an = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let mut r = rng::stream(cfg.seed, &[0x1F11, 1 + t as u64]);
        let w = random_matrix(cfg.u, cfg.c, 1.0, &mut r);
        let v = random_matrix(cfg.u, cfg.u, bound, &mut r);
        s_in.push(group_gradient_norm(&w, &v, cfg.n_inlier, &mut r));
        s_an.push(group_gradient_norm(&w, &v, cfg.n_anom, &mut r));
    }
    let (mean_inlier, se_in) = mean_and_se(&s_in);
    let (mean_anom, se_an) = mean_and_se(&s_an);
    let ratio = mean_inlier / mean_anom;
    let rel = (se_in / mean_inlier).powi(2) + (se_an / mean_anom).powi(2);
    Ok(InlierPriorityResult {
        ratio,
        std_error: ratio * rel.sqrt(),
        mean_inlier,
        mean_anom,
        pair_moment,
        pair_square_moment,
    })
}

fn random_matrix<Rg: rand_core::RngCore>(
    rows: usize,
    cols: usize,
    bound: f64,
    r: &mut Rg,
) -> Matrix<Real> {
    let data = (0..rows * cols)
        .map(|_| rng::uniform_range(r, -bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of ln(y) against ln(x) with its standard error.
/// Points must have strictly positive coordinates.
pub fn fit_log_log_slope(points: &[(f64, f64)]) -> Result<(f64, f64), TheoryError> {
    if points.len() < 3 {
        return Err(TheoryError::InvalidQuery(
            "need at least 3 points to fit a slope with an error bar".into(),
        ));
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(TheoryError::InvalidQuery(
            "log-log fit needs positive coordinates".into(),
        ));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(&x, &y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    Ok((slope, se))
}
