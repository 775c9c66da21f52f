//! Bayesian layer over the deployment GLM: adaptive random-walk Metropolis
//! posterior sampling, period-by-period sequential updating with Gaussian
//! moment matching, posterior-predictive road probabilities, and
//! multiplicative-weights pooling of competing forecast streams.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::{build_design, DeploymentPanel, GlmError, ModelSpec, ResponseWindow};
use crate::netmodel::RoadNetwork;
use crate::prob::{log_std_normal_cdf, std_normal_cdf};

/// Gaussian belief over the stacked coefficient vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    /// Symmetric positive definite; checked at construction and again before
    /// each sampling run.
    pub covariance: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, BayesError> {
        let dim = mean.len();
        if dim == 0 {
            return Err(BayesError::BadPrior("mean vector is empty".into()));
        }
        if covariance.shape() != (dim, dim) {
            return Err(BayesError::BadPrior(format!(
                "covariance is {}x{} for a {dim}-dimensional mean",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let prior = GaussianPrior { mean, covariance };
        prior.factor()?;
        Ok(prior)
    }

    /// Independent N(0, variance) on every coefficient.
    pub fn diffuse(dim: usize, variance: f64) -> Self {
        assert!(dim > 0 && variance > 0.0);
        GaussianPrior {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>, BayesError> {
        let c = &self.covariance;
        let scale = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let skew = (c - c.transpose()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if skew > 1e-8 * (1.0 + scale) {
            return Err(BayesError::NotSpd);
        }
        Cholesky::new(c.clone()).ok_or(BayesError::NotSpd)
    }
}

/// Retained MCMC output. Rows of `draws` are kept states in chain order.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub draws: DMatrix<f64>,
    /// Fraction accepted after warm-up.
    pub acceptance_rate: f64,
    pub seed: u64,
    /// Autocorrelation-adjusted sample size per coordinate, in (0, S].
    pub effective_sample_size: Vec<f64>,
}

impl PosteriorSamples {
    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.draws.row_sum().transpose() / self.draws.nrows().max(1) as f64
    }

    /// Sample covariance with the n-1 divisor; zero matrix for a single draw.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (s, dim) = self.draws.shape();
        let mut cov = DMatrix::zeros(dim, dim);
        if s < 2 {
            return cov;
        }
        let mean = self.mean();
        for r in 0..s {
            let d = self.draws.row(r).transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov / (s - 1) as f64
    }

    /// Monte Carlo standard error of the posterior-mean estimate, per
    /// coordinate: chain sd / sqrt(ESS).
    pub fn mc_std_error(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.dim())
            .map(|j| (cov[(j, j)] / self.effective_sample_size[j].max(1.0)).sqrt())
            .collect()
    }
}

/// Chain lengths and seed. Warm-up steps adapt the proposal and are
/// discarded; `draws` states are kept afterwards with the proposal frozen.
#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig {
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            warmup: 2000,
            draws: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("prior covariance is not symmetric positive definite")]
    NotSpd,
    #[error("malformed prior: {0}")]
    BadPrior(String),
    #[error("prior covers {prior} coefficients but the design has {design} columns")]
    PriorDesignMismatch { prior: usize, design: usize },
    #[error("design has {rows} rows but the response has {response} entries")]
    ResponseMismatch { rows: usize, response: usize },
    #[error("need at least one kept draw")]
    NoDraws,
    #[error("draws cover {draws} coefficients but the design has {design} columns")]
    PredictiveMismatch { draws: usize, design: usize },
    #[error("period `{period}`: {source}")]
    Period {
        period: String,
        source: Box<BayesError>,
    },
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("panel has no periods")]
    NoPeriods,
    #[error("pooling needs at least two sources")]
    NeedTwoSources,
    #[error("pooling needs at least one period")]
    NoPoolPeriods,
    #[error("period {period} has {got} sources, expected {want}")]
    PoolSources {
        period: usize,
        got: usize,
        want: usize,
    },
    #[error("period {period}, source {forecaster}: {got} predictions for {want} outcomes")]
    PoolShape {
        period: usize,
        forecaster: usize,
        got: usize,
        want: usize,
    },
    #[error("period {period}, source {forecaster}: prediction {value} is not inside (0, 1)")]
    PoolProbability {
        period: usize,
        forecaster: usize,
        value: f64,
    },
    #[error("learning rate must be finite and nonnegative")]
    BadLearningRate,
    #[error("{labels} labels for {dim} coefficients")]
    LabelMismatch { labels: usize, dim: usize },
    #[error("prior file {path}: {message}")]
    PriorIo { path: String, message: String },
}

const TARGET_ACCEPT: f64 = 0.234;
const ADAPT_INTERVAL: usize = 500;
const ESS_MAX_LAG: usize = 512;

fn probit_log_likelihood(x: &DMatrix<f64>, y: &[bool], theta: &DVector<f64>) -> f64 {
    let eta = x * theta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| log_std_normal_cdf(if yi { e } else { -e }))
        .sum()
}

/// Draw from prior x probit-likelihood for the given design and response.
/// With zero data rows the target reduces to the prior. Deterministic for a
/// fixed seed.
pub fn sample_posterior(
    prior: &GaussianPrior,
    x: &DMatrix<f64>,
    y: &[bool],
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples, BayesError> {
    if x.ncols() != prior.dim() {
        return Err(BayesError::PriorDesignMismatch {
            prior: prior.dim(),
            design: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(BayesError::ResponseMismatch {
            rows: x.nrows(),
            response: y.len(),
        });
    }
    sample_with(prior, |theta| probit_log_likelihood(x, y, theta), cfg)
}

/// Metropolis chain against an arbitrary log-likelihood added to the prior
/// log-density. The proposal is a scaled Gaussian whose shape starts at the
/// prior factor and is re-estimated from the warm-up history; the global step
/// size chases a 0.234 acceptance rate and both freeze when warm-up ends.
pub fn sample_with<L>(
    prior: &GaussianPrior,
    log_likelihood: L,
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples, BayesError>
where
    L: Fn(&DVector<f64>) -> f64,
{
    if cfg.draws == 0 {
        return Err(BayesError::NoDraws);
    }
    let factor = prior.factor()?;
    let dim = prior.dim();
    let log_target = |theta: &DVector<f64>| {
        let d = theta - &prior.mean;
        -0.5 * d.dot(&factor.solve(&d)) + log_likelihood(theta)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = prior.mean.clone();
    let mut current = log_target(&theta);
    let base = 2.38 / (dim as f64).sqrt();
    let mut log_scale = 0.0_f64;
    let mut shape = factor.l();
    let mut warm: Vec<DVector<f64>> = Vec::with_capacity(cfg.warmup);

    for t in 0..cfg.warmup {
        let (alpha, _) = mh_step(
            &mut rng,
            &mut theta,
            &mut current,
            &log_target,
            &shape,
            base * log_scale.exp(),
        );
        // Robbins-Monro on the log step size; the exponent keeps later
        // corrections small so the frozen value is stable.
        log_scale += ((t + 1) as f64).powf(-0.6) * (alpha - TARGET_ACCEPT);
        log_scale = log_scale.clamp(-20.0, 10.0);
        warm.push(theta.clone());
        if (t + 1) % ADAPT_INTERVAL == 0 && warm.len() >= 10 * dim {
            if let Some(l) = proposal_shape(&warm) {
                shape = l;
            }
        }
    }

    let step = base * log_scale.exp();
    let mut draws = DMatrix::zeros(cfg.draws, dim);
    let mut accepted = 0_usize;
    for s in 0..cfg.draws {
        let (_, took) = mh_step(&mut rng, &mut theta, &mut current, &log_target, &shape, step);
        if took {
            accepted += 1;
        }
        draws.row_mut(s).copy_from(&theta.transpose());
    }

    let effective_sample_size = (0..dim)
        .map(|j| {
            let col: Vec<f64> = draws.column(j).iter().copied().collect();
            effective_sample_size(&col)
        })
        .collect();
    Ok(PosteriorSamples {
        draws,
        acceptance_rate: accepted as f64 / cfg.draws as f64,
        seed: cfg.seed,
        effective_sample_size,
    })
}

/// One proposal; returns (acceptance probability, whether it was taken).
/// Both branches consume the same amount of randomness.
fn mh_step<T: Fn(&DVector<f64>) -> f64>(
    rng: &mut ChaCha8Rng,
    theta: &mut DVector<f64>,
    current: &mut f64,
    log_target: &T,
    shape: &DMatrix<f64>,
    step: f64,
) -> (f64, bool) {
    let dim = theta.len();
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cand = &*theta + shape * (z * step);
    let lc = log_target(&cand);
    let delta = lc - *current;
    let alpha = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
    let took = rng.random::<f64>() < alpha;
    if took {
        *theta = cand;
        *current = lc;
    }
    (alpha, took)
}

/// Cholesky factor of the empirical covariance of the warm-up history, with
/// a small diagonal cushion so early near-degenerate histories still factor.
fn proposal_shape(warm: &[DVector<f64>]) -> Option<DMatrix<f64>> {
    let s = warm.len();
    let dim = warm[0].len();
    let mut mean = DVector::zeros(dim);
    for w in warm {
        mean += w;
    }
    mean /= s as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for w in warm {
        let d = w - &mean;
        cov += &d * d.transpose();
    }
    cov /= (s - 1) as f64;
    let eps = (cov.trace() / dim as f64 * 1e-9).max(1e-12);
    for i in 0..dim {
        cov[(i, i)] += eps;
    }
    Cholesky::new(cov).map(|c| c.l())
}

/// Initial positive-sequence truncation: sum sample autocorrelations until
/// the first nonpositive one.
fn effective_sample_size(col: &[f64]) -> f64 {
    let s = col.len();
    if s < 2 {
        return s as f64;
    }
    let n = s as f64;
    let mean = col.iter().sum::<f64>() / n;
    let c0 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if c0 <= 0.0 {
        // Constant chain: every draw carries the same (single) value.
        return n;
    }
    let mut acc = 0.0;
    for lag in 1..s.min(ESS_MAX_LAG) {
        let c = (0..s - lag)
            .map(|i| (col[i] - mean) * (col[i + lag] - mean))
            .sum::<f64>()
            / n;
        let rho = c / c0;
        if rho <= 0.0 {
            break;
        }
        acc += rho;
    }
    (n / (1.0 + 2.0 * acc)).clamp(1.0, n)
}

/// Collapse samples to a Gaussian. The mean is the exact sample mean; the
/// covariance is the sample covariance, ridged upward by escalating powers of
/// ten until it factors. Returns the jitter flag alongside the prior.
pub fn moment_match(samples: &PosteriorSamples) -> Result<(GaussianPrior, bool), BayesError> {
    let dim = samples.dim();
    if samples.draws.nrows() == 0 {
        return Err(BayesError::NoDraws);
    }
    let mean = samples.mean();
    let raw = samples.covariance();
    let cov = (&raw + raw.transpose()) * 0.5;
    let scale = (cov.trace() / dim as f64).max(1e-12);
    let mut jittered = false;
    let mut eps = 0.0;
    loop {
        let mut trial = cov.clone();
        for i in 0..dim {
            trial[(i, i)] += eps;
        }
        if Cholesky::new(trial.clone()).is_some() {
            return Ok((
                GaussianPrior {
                    mean,
                    covariance: trial,
                },
                jittered,
            ));
        }
        jittered = true;
        eps = if eps == 0.0 { scale * 1e-12 } else { eps * 10.0 };
        if eps > scale * 10.0 {
            return Err(BayesError::NotSpd);
        }
    }
}

/// Output of [`sequential_update`]: the belief after each period, the chain
/// from the last period that carried data, and which periods needed jitter to
/// keep their moment-matched covariance positive definite.
#[derive(Clone, Debug)]
pub struct SequentialUpdate {
    pub priors: Vec<GaussianPrior>,
    pub samples: PosteriorSamples,
    pub jittered_periods: Vec<String>,
}

/// Walk the panel period by period: sample the posterior under the current
/// prior and that period's rows, then moment-match the draws into the prior
/// for the next period. The Gaussian collapse between periods is lossy by
/// design.
///
/// Periods that cannot form a likelihood, because no outcome was recorded or
/// because fewer earlier periods exist than the model's lag depth, pass the
/// prior through unchanged. Period i samples with seed `cfg.seed + i`.
pub fn sequential_update(
    prior: &GaussianPrior,
    net: &RoadNetwork,
    spec: &ModelSpec,
    panel: &DeploymentPanel,
    cfg: &SamplerConfig,
) -> Result<SequentialUpdate, BayesError> {
    if panel.periods().is_empty() {
        return Err(BayesError::NoPeriods);
    }
    let wrap = |label: &str| {
        let period = label.to_owned();
        move |e: BayesError| BayesError::Period {
            period,
            source: Box::new(e),
        }
    };
    let mut current = prior.clone();
    let mut priors = Vec::with_capacity(panel.periods().len());
    let mut jittered_periods = Vec::new();
    let mut last: Option<PosteriorSamples> = None;
    for (idx, label) in panel.periods().to_vec().iter().enumerate() {
        let has_rows = panel.roads().any(|r| panel.outcome(r, idx).is_some());
        if !has_rows || idx < spec.lags {
            priors.push(current.clone());
            continue;
        }
        let design = build_design(net, spec, panel, &ResponseWindow::Period(label.clone()))
            .map_err(BayesError::from)
            .map_err(wrap(label))?;
        let period_cfg = SamplerConfig {
            seed: cfg.seed.wrapping_add(idx as u64),
            ..*cfg
        };
        let samples = sample_posterior(&current, &design.matrix, &design.response, &period_cfg)
            .map_err(wrap(label))?;
        let (next, jittered) = moment_match(&samples).map_err(wrap(label))?;
        if jittered {
            jittered_periods.push(label.clone());
        }
        current = next;
        priors.push(current.clone());
        last = Some(samples);
    }
    let samples = match last {
        Some(s) => s,
        // Every period was empty: the belief never moved, so report a chain
        // over the prior alone.
        None => sample_with(prior, |_| 0.0, cfg)?,
    };
    Ok(SequentialUpdate {
        priors,
        samples,
        jittered_periods,
    })
}

/// Per-row deployment probability: the average of Phi(x theta) over draws.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>, BayesError> {
    if x.ncols() != samples.dim() {
        return Err(BayesError::PredictiveMismatch {
            draws: samples.dim(),
            design: x.ncols(),
        });
    }
    let s = samples.draws.nrows();
    if s == 0 {
        return Err(BayesError::NoDraws);
    }
    let eta = x * samples.draws.transpose();
    Ok((0..x.nrows())
        .map(|i| eta.row(i).iter().map(|&e| std_normal_cdf(e)).sum::<f64>() / s as f64)
        .collect())
}

/// One period of competing forecasts: `predictions[source][unit]` against the
/// realized `outcomes[unit]`.
#[derive(Clone, Debug)]
pub struct PoolPeriod {
    pub predictions: Vec<Vec<f64>>,
    pub outcomes: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct PoolResult {
    /// Convex combination per period, mixed with the weights held *before*
    /// that period's outcomes were seen.
    pub pooled: Vec<Vec<f64>>,
    /// Weight trajectory: row 0 is uniform, row t+1 follows period t. Every
    /// row sums to one.
    pub weights: Vec<Vec<f64>>,
    /// Brier score per period per source.
    pub scores: Vec<Vec<f64>>,
}

/// Multiplicative-weights pooling: after each period a source's weight is
/// proportional to exp(-eta * cumulative Brier score). Scores are shifted by
/// their minimum before exponentiation, which also makes the weights exactly
/// invariant to adding a constant to every source's score in a period.
pub fn pool_predictions(periods: &[PoolPeriod], eta: f64) -> Result<PoolResult, BayesError> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(BayesError::BadLearningRate);
    }
    if periods.is_empty() {
        return Err(BayesError::NoPoolPeriods);
    }
    let sources = periods[0].predictions.len();
    if sources < 2 {
        return Err(BayesError::NeedTwoSources);
    }
    let mut cumulative = vec![0.0_f64; sources];
    let mut weights_now = vec![1.0 / sources as f64; sources];
    let mut weights = vec![weights_now.clone()];
    let mut pooled = Vec::with_capacity(periods.len());
    let mut scores = Vec::with_capacity(periods.len());
    for (t, period) in periods.iter().enumerate() {
        if period.predictions.len() != sources {
            return Err(BayesError::PoolSources {
                period: t,
                got: period.predictions.len(),
                want: sources,
            });
        }
        let units = period.outcomes.len();
        for (si, preds) in period.predictions.iter().enumerate() {
            if preds.len() != units {
                return Err(BayesError::PoolShape {
                    period: t,
                    forecaster: si,
                    got: preds.len(),
                    want: units,
                });
            }
            for &p in preds {
                if !(p > 0.0 && p < 1.0) {
                    return Err(BayesError::PoolProbability {
                        period: t,
                        forecaster: si,
                        value: p,
                    });
                }
            }
        }
        let mix: Vec<f64> = (0..units)
            .map(|u| {
                period
                    .predictions
                    .iter()
                    .zip(&weights_now)
                    .map(|(preds, w)| w * preds[u])
                    .sum()
            })
            .collect();
        pooled.push(mix);
        let brier: Vec<f64> = period
            .predictions
            .iter()
            .map(|preds| {
                if units == 0 {
                    0.0
                } else {
                    preds
                        .iter()
                        .zip(&period.outcomes)
                        .map(|(&p, &y)| {
                            let d = p - if y { 1.0 } else { 0.0 };
                            d * d
                        })
                        .sum::<f64>()
                        / units as f64
                }
            })
            .collect();
        for (c, b) in cumulative.iter_mut().zip(&brier) {
            *c += b;
        }
        scores.push(brier);
        let shift = cumulative.iter().cloned().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = cumulative.iter().map(|&c| (-eta * (c - shift)).exp()).collect();
        let total: f64 = raw.iter().sum();
        weights_now = raw.iter().map(|&r| r / total).collect();
        weights.push(weights_now.clone());
    }
    Ok(PoolResult {
        pooled,
        weights,
        scores,
    })
}

/// CSV with one column per coefficient and one row per kept draw.
pub fn samples_csv(samples: &PosteriorSamples, labels: &[String]) -> Result<String, BayesError> {
    if labels.len() != samples.dim() {
        return Err(BayesError::LabelMismatch {
            labels: labels.len(),
            dim: samples.dim(),
        });
    }
    let mut out = labels.join(",");
    out.push('\n');
    for r in 0..samples.draws.nrows() {
        let row: Vec<String> = samples.draws.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

pub fn prior_to_json(prior: &GaussianPrior) -> String {
    let dim = prior.dim();
    let file = PriorFile {
        mean: prior.mean.iter().copied().collect(),
        covariance: (0..dim)
            .map(|i| (0..dim).map(|j| prior.covariance[(i, j)]).collect())
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("prior serializes");
    text.push('\n');
    text
}

pub fn prior_from_json(text: &str) -> Result<GaussianPrior, BayesError> {
    let file: PriorFile =
        serde_json::from_str(text).map_err(|e| BayesError::BadPrior(e.to_string()))?;
    let dim = file.mean.len();
    if file.covariance.len() != dim || file.covariance.iter().any(|row| row.len() != dim) {
        return Err(BayesError::BadPrior(format!(
            "covariance must be {dim}x{dim} to match the mean"
        )));
    }
    GaussianPrior::new(
        DVector::from_vec(file.mean),
        DMatrix::from_fn(dim, dim, |i, j| file.covariance[i][j]),
    )
}

pub fn save_prior(prior: &GaussianPrior, path: &Path) -> Result<(), BayesError> {
    fs::write(path, prior_to_json(prior)).map_err(|e| BayesError::PriorIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_prior(path: &Path) -> Result<GaussianPrior, BayesError> {
    let text = fs::read_to_string(path).map_err(|e| BayesError::PriorIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    prior_from_json(&text)
}
