//! Likelihoods, priors and posterior targets for the three crash models.
//!
//! * conditional logistic: per stratum, the probability that the crash rather
//!   than one of its controls is the event. Stratum intercepts cancel.
//! * logistic: one pooled intercept, every observation an independent
//!   Bernoulli draw.
//! * random-effect logistic: pooled intercept plus a normal group intercept
//!   `u_g` with precision `tau`, sampled jointly with the other parameters.
//!
//! Coefficient priors are `Normal(0, variance 1000)`; `tau` gets a diffuse
//! `Gamma(0.001, 0.001)` (shape, rate).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::matching::MatchedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// One intercept per matched set.
    #[default]
    Stratum,
    Segment,
}

impl FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stratum" => Ok(Grouping::Stratum),
            "segment" => Ok(Grouping::Segment),
            other => Err(Error::UnknownGrouping(other.to_string())),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Stratum => "stratum",
            Grouping::Segment => "segment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Conditional,
    Logistic,
    RandomEffect(Grouping),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Conditional => "conditional",
            ModelKind::Logistic => "logistic",
            ModelKind::RandomEffect(_) => "ranef",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            ModelKind::Conditional => "Bayesian conditional logistic model",
            ModelKind::Logistic => "Bayesian logistic model",
            ModelKind::RandomEffect(_) => "Bayesian random effect logistic model",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conditional" => Ok(ModelKind::Conditional),
            "logistic" => Ok(ModelKind::Logistic),
            "ranef" => Ok(ModelKind::RandomEffect(Grouping::default())),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

/// Normal priors are parameterised by variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub coef_mean: f64,
    pub coef_variance: f64,
    pub intercept_mean: f64,
    pub intercept_variance: f64,
    pub tau_shape: f64,
    pub tau_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            coef_mean: 0.0,
            coef_variance: 1000.0,
            intercept_mean: 0.0,
            intercept_variance: 1000.0,
            tau_shape: 0.001,
            tau_rate: 0.001,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.coef_variance,
            self.intercept_variance,
            self.tau_shape,
            self.tau_rate,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("prior variances and gamma parameters must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RanefParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    /// Precision of the group intercepts.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Conditional(Vec<f64>),
    Logistic(LogisticParams),
    RandomEffect(RanefParams),
}

impl ModelParams {
    pub fn beta(&self) -> &[f64] {
        match self {
            ModelParams::Conditional(b) => b,
            ModelParams::Logistic(p) => &p.beta,
            ModelParams::RandomEffect(p) => &p.beta,
        }
    }
}

/// Group membership of each stratum for the random-effect model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    of_stratum: Vec<usize>,
    labels: Vec<String>,
}

impl Groups {
    pub fn new(ds: &MatchedDataset, grouping: Grouping) -> Groups {
        match grouping {
            Grouping::Stratum => Groups {
                of_stratum: (0..ds.n_strata()).collect(),
                labels: ds.strata().iter().map(|s| s.stratum_id.to_string()).collect(),
            },
            Grouping::Segment => {
                let mut labels: Vec<String> = Vec::new();
                let of_stratum = ds
                    .strata()
                    .iter()
                    .map(|s| match labels.iter().position(|l| *l == s.key.segment_id) {
                        Some(g) => g,
                        None => {
                            labels.push(s.key.segment_id.clone());
                            labels.len() - 1
                        }
                    })
                    .collect();
                Groups { of_stratum, labels }
            }
        }
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn of_stratum(&self, i: usize) -> usize {
        self.of_stratum[i]
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear predictors of one stratum into `eta`, returning their log-sum-exp.
#[inline]
fn stratum_lse(beta: &[f64], rows: &[f64], eta: &mut [f64]) -> f64 {
    let k = beta.len();
    let mut max = f64::NEG_INFINITY;
    for (e, x) in eta.iter_mut().zip(rows.chunks_exact(k)) {
        *e = dot(beta, x);
        max = max.max(*e);
    }
    max + eta.iter().map(|e| (e - max).exp()).sum::<f64>().ln()
}

/// Log of the conditional likelihood: `sum_i [b.x_case - logsumexp_j b.x_ij]`.
pub fn cond_log_likelihood(beta: &[f64], ds: &MatchedDataset) -> Result<f64> {
    check_dim(ds.k(), beta.len())?;
    Ok(cond_ll_unchecked(beta, ds))
}

fn cond_ll_unchecked(beta: &[f64], ds: &MatchedDataset) -> f64 {
    let mut eta = vec![0.0; ds.m() + 1];
    (0..ds.n_strata())
        .map(|i| {
            let lse = stratum_lse(beta, ds.stratum_rows(i), &mut eta);
            eta[0] - lse
        })
        .sum()
}

/// Gradient of [`cond_log_likelihood`]: `sum_i [x_case - sum_j w_ij x_ij]`
/// with `w` the within-stratum softmax of the linear predictors.
pub fn cond_gradient(beta: &[f64], ds: &MatchedDataset) -> Result<Vec<f64>> {
    check_dim(ds.k(), beta.len())?;
    Ok(cond_derivatives(beta, ds, false).1)
}

/// Observed information (negative Hessian) of the conditional log-likelihood,
/// row-major `k x k`: the sum over strata of the softmax-weighted covariance
/// of the member feature vectors.
pub fn cond_information(beta: &[f64], ds: &MatchedDataset) -> Result<Vec<f64>> {
    check_dim(ds.k(), beta.len())?;
    Ok(cond_derivatives(beta, ds, true).2)
}

fn cond_derivatives(beta: &[f64], ds: &MatchedDataset, with_info: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let k = ds.k();
    let mut eta = vec![0.0; ds.m() + 1];
    let mut ll = 0.0;
    let mut grad = vec![0.0; k];
    let mut info = vec![0.0; if with_info { k * k } else { 0 }];
    let mut xbar = vec![0.0; k];
    for i in 0..ds.n_strata() {
        let rows = ds.stratum_rows(i);
        let lse = stratum_lse(beta, rows, &mut eta);
        ll += eta[0] - lse;
        xbar.iter_mut().for_each(|v| *v = 0.0);
        for (e, x) in eta.iter().zip(rows.chunks_exact(k)) {
            let w = (e - lse).exp();
            for (b, xv) in xbar.iter_mut().zip(x) {
                *b += w * xv;
            }
        }
        for ((g, xc), b) in grad.iter_mut().zip(&rows[..k]).zip(&xbar) {
            *g += xc - b;
        }
        if with_info {
            for (e, x) in eta.iter().zip(rows.chunks_exact(k)) {
                let w = (e - lse).exp();
                for a in 0..k {
                    let da = x[a] - xbar[a];
                    for b in 0..k {
                        info[a * k + b] += w * da * (x[b] - xbar[b]);
                    }
                }
            }
        }
    }
    (ll, grad, info)
}

/// Pooled-intercept Bernoulli log-likelihood over every observation.
pub fn logistic_log_likelihood(params: &LogisticParams, ds: &MatchedDataset) -> Result<f64> {
    check_dim(ds.k(), params.beta.len())?;
    Ok(bernoulli_ll(params.alpha, &params.beta, None, ds))
}

fn bernoulli_ll(alpha: f64, beta: &[f64], effects: Option<(&[f64], &Groups)>, ds: &MatchedDataset) -> f64 {
    let per = ds.m() + 1;
    let mut total = 0.0;
    for (r, x) in ds.rows().enumerate() {
        let mut eta = alpha + dot(beta, x);
        if let Some((u, groups)) = effects {
            eta += u[groups.of_stratum(r / per)];
        }
        let y = if ds.row_is_case(r) { eta } else { 0.0 };
        total += y - log1p_exp(eta);
    }
    total
}

/// Data log-likelihood given the group intercepts, without their density.
pub fn ranef_data_log_likelihood(params: &RanefParams, ds: &MatchedDataset, groups: &Groups) -> Result<f64> {
    check_dim(ds.k(), params.beta.len())?;
    check_dim(groups.count(), params.u.len())?;
    Ok(bernoulli_ll(params.alpha, &params.beta, Some((&params.u, groups)), ds))
}

/// Joint log-density of the data and the group intercepts:
/// Bernoulli terms plus `sum_g [ln(tau / 2 pi) / 2 - tau u_g^2 / 2]`.
pub fn ranef_log_likelihood(params: &RanefParams, ds: &MatchedDataset, groups: &Groups) -> Result<f64> {
    if params.tau <= 0.0 {
        return Err(Error::NonPositiveTau(params.tau));
    }
    Ok(ranef_data_log_likelihood(params, ds, groups)? + latent_log_density(&params.u, params.tau))
}

pub fn latent_log_density(u: &[f64], tau: f64) -> f64 {
    let half_log = 0.5 * (tau / (2.0 * PI)).ln();
    u.iter().map(|v| half_log - 0.5 * tau * v * v).sum()
}

pub fn normal_log_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * PI * variance).ln() - (x - mean).powi(2) / (2.0 * variance)
}

/// Gamma log-density, shape/rate parameterisation.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn log_prior(params: &ModelParams, spec: &PriorSpec) -> Result<f64> {
    let coefs = |beta: &[f64]| -> f64 {
        beta.iter()
            .map(|b| normal_log_density(*b, spec.coef_mean, spec.coef_variance))
            .sum()
    };
    let intercept = |a: f64| normal_log_density(a, spec.intercept_mean, spec.intercept_variance);
    Ok(match params {
        ModelParams::Conditional(beta) => coefs(beta),
        ModelParams::Logistic(p) => intercept(p.alpha) + coefs(&p.beta),
        ModelParams::RandomEffect(p) => {
            if p.tau <= 0.0 {
                return Err(Error::NonPositiveTau(p.tau));
            }
            intercept(p.alpha) + coefs(&p.beta) + gamma_log_density(p.tau, spec.tau_shape, spec.tau_rate)
        }
    })
}

/// Model log-likelihood; for the random-effect model this is the joint
/// density including the latent intercepts.
pub fn log_likelihood(params: &ModelParams, ds: &MatchedDataset, groups: Option<&Groups>) -> Result<f64> {
    match params {
        ModelParams::Conditional(beta) => cond_log_likelihood(beta, ds),
        ModelParams::Logistic(p) => logistic_log_likelihood(p, ds),
        ModelParams::RandomEffect(p) => {
            let groups = groups.ok_or_else(|| Error::InvalidConfig("random-effect model needs groups".into()))?;
            ranef_log_likelihood(p, ds, groups)
        }
    }
}

pub fn log_posterior(params: &ModelParams, ds: &MatchedDataset, spec: &PriorSpec, groups: Option<&Groups>) -> Result<f64> {
    Ok(log_likelihood(params, ds, groups)? + log_prior(params, spec)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    /// Stop once the gradient max-norm is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient norm beyond which the likelihood is declared unbounded.
    pub separation_norm: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            tol: 1e-8,
            max_iter: 100,
            separation_norm: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub estimate: Vec<f64>,
    /// Square roots of the inverse-information diagonal; NaN when singular.
    pub std_errors: Vec<f64>,
    /// Row-major observed information at the estimate.
    pub information: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Newton-Raphson ascent. `eval` returns value, gradient and information;
/// `value` alone is used by the line search, which doubles the step while the
/// objective does not fall, so that an unbounded direction runs past the
/// separation threshold instead of stalling where the tail saturates.
fn newton(
    init: Vec<f64>,
    eval: impl Fn(&[f64]) -> (f64, Vec<f64>, Vec<f64>),
    value: impl Fn(&[f64]) -> f64,
    config: &MleConfig,
) -> Result<(Vec<f64>, usize)> {
    let dim = init.len();
    let mut theta = init;
    let mut last_gradient = f64::INFINITY;
    for iter in 0..config.max_iter {
        let (f, g, info) = eval(&theta);
        let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        last_gradient = gmax;
        if gmax < config.tol {
            return Ok((theta, iter));
        }
        let step = solve_spd(&info, &g, dim);
        let at = |t: f64| -> Vec<f64> { theta.iter().zip(&step).map(|(x, s)| x + t * s).collect() };

        let mut t = 1.0;
        let mut best = value(&at(t));
        if best > f {
            while t < 1e9 {
                let next = value(&at(2.0 * t));
                if next >= best {
                    best = next;
                    t *= 2.0;
                } else {
                    break;
                }
            }
        } else {
            let mut halvings = 0;
            // NaN counts as no ascent
            let ascends = |b: f64| b.partial_cmp(&f) == Some(std::cmp::Ordering::Greater);
            while !ascends(best) && halvings < 60 {
                t *= 0.5;
                best = value(&at(t));
                halvings += 1;
            }
            if !ascends(best) {
                // no ascent possible along the Newton direction
                return Err(Error::NoConvergence {
                    iterations: iter,
                    gradient: gmax,
                });
            }
        }
        theta = at(t);
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > config.separation_norm {
            return Err(Error::Separation { norm });
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iter,
        gradient: last_gradient,
    })
}

/// Solves `info * s = g`, adding a growing ridge if `info` is not positive definite.
fn solve_spd(info: &[f64], g: &[f64], dim: usize) -> Vec<f64> {
    let a = DMatrix::from_row_slice(dim, dim, info);
    let b = DVector::from_column_slice(g);
    let scale = (0..dim).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max).max(1e-300);
    let mut ridge = 0.0;
    loop {
        let shifted = &a + DMatrix::identity(dim, dim) * ridge;
        if let Some(chol) = shifted.cholesky() {
            return chol.solve(&b).iter().copied().collect();
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
        if !ridge.is_finite() {
            return g.to_vec();
        }
    }
}

fn inverse_diagonal_sqrt(info: &[f64], dim: usize) -> Vec<f64> {
    DMatrix::from_row_slice(dim, dim, info)
        .cholesky()
        .map(|c| c.inverse().diagonal().iter().map(|v| v.sqrt()).collect())
        .unwrap_or_else(|| vec![f64::NAN; dim])
}

/// Conditional maximum likelihood by Newton-Raphson with the analytic
/// gradient and information, starting at the origin.
pub fn mle_fit(ds: &MatchedDataset, config: &MleConfig) -> Result<MleFit> {
    let k = ds.k();
    let (estimate, iterations) = newton(
        vec![0.0; k],
        |b| cond_derivatives(b, ds, true),
        |b| cond_ll_unchecked(b, ds),
        config,
    )?;
    let (log_likelihood, _, information) = cond_derivatives(&estimate, ds, true);
    Ok(MleFit {
        std_errors: inverse_diagonal_sqrt(&information, k),
        estimate,
        information,
        log_likelihood,
        iterations,
    })
}

fn logistic_derivatives(theta: &[f64], ds: &MatchedDataset) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = theta.len();
    let (alpha, beta) = (theta[0], &theta[1..]);
    let mut ll = 0.0;
    let mut grad = vec![0.0; dim];
    let mut info = vec![0.0; dim * dim];
    let mut z = vec![1.0; dim];
    for (r, x) in ds.rows().enumerate() {
        z[1..].copy_from_slice(x);
        let eta = alpha + dot(beta, x);
        let y = if ds.row_is_case(r) { 1.0 } else { 0.0 };
        ll += y * eta - log1p_exp(eta);
        let p = sigmoid(eta);
        let w = p * (1.0 - p);
        for a in 0..dim {
            grad[a] += (y - p) * z[a];
            for b in 0..dim {
                info[a * dim + b] += w * z[a] * z[b];
            }
        }
    }
    (ll, grad, info)
}

/// Pooled logistic maximum likelihood; the estimate is `[alpha, beta...]`.
pub fn logistic_mle(ds: &MatchedDataset, config: &MleConfig) -> Result<MleFit> {
    let dim = ds.k() + 1;
    let value = |t: &[f64]| bernoulli_ll(t[0], &t[1..], None, ds);
    let (estimate, iterations) = newton(vec![0.0; dim], |t| logistic_derivatives(t, ds), value, config)?;
    let (log_likelihood, _, information) = logistic_derivatives(&estimate, ds);
    Ok(MleFit {
        std_errors: inverse_diagonal_sqrt(&information, dim),
        estimate,
        information,
        log_likelihood,
        iterations,
    })
}

/// Posterior of one model on one dataset, as an unconstrained log-density
/// over a flat parameter vector.
///
/// Sampling layouts: conditional `[beta]`; logistic `[alpha, beta]`; random
/// effect `[alpha, beta, z_1..z_G, ln tau]` with `u = z / sqrt(tau)`. The
/// non-centred `z` keeps the group effects on a unit scale whatever `tau` is,
/// which avoids the funnel a diffuse precision prior creates.
/// [`Posterior::to_model_scale`] maps a sampled vector to the model layout
/// `[alpha, beta, u_1..u_G, ln tau]` that [`Posterior::unpack`] reads.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    kind: ModelKind,
    ds: &'a MatchedDataset,
    prior: PriorSpec,
    groups: Option<Groups>,
}

impl<'a> Posterior<'a> {
    pub fn new(kind: ModelKind, ds: &'a MatchedDataset, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        let groups = match kind {
            ModelKind::RandomEffect(g) => Some(Groups::new(ds, g)),
            _ => None,
        };
        Ok(Posterior { kind, ds, prior, groups })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dataset(&self) -> &MatchedDataset {
        self.ds
    }

    pub fn groups(&self) -> Option<&Groups> {
        self.groups.as_ref()
    }

    pub fn dim(&self) -> usize {
        let k = self.ds.k();
        match self.kind {
            ModelKind::Conditional => k,
            ModelKind::Logistic => k + 1,
            ModelKind::RandomEffect(_) => k + 2 + self.groups.as_ref().map_or(0, Groups::count),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let features = self.ds.feature_names().iter().cloned();
        match self.kind {
            ModelKind::Conditional => features.collect(),
            ModelKind::Logistic => std::iter::once("intercept".to_string()).chain(features).collect(),
            ModelKind::RandomEffect(_) => {
                let groups = self.groups.as_ref().expect("groups");
                std::iter::once("intercept".to_string())
                    .chain(features)
                    .chain(groups.labels().iter().map(|l| format!("u[{l}]")))
                    .chain(std::iter::once("log_tau".to_string()))
                    .collect()
            }
        }
    }

    /// Sampling vector to model layout; only the random-effect `z` change.
    pub fn to_model_scale(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        if let (ModelKind::RandomEffect(_), Some(&log_tau)) = (self.kind, theta.last()) {
            let k = self.ds.k();
            let scale = (-0.5 * log_tau).exp();
            let end = out.len() - 1;
            out[k + 1..end].iter_mut().for_each(|z| *z *= scale);
        }
        out
    }

    /// Reads a vector in model layout.
    pub fn unpack(&self, theta: &[f64]) -> Result<ModelParams> {
        check_dim(self.dim(), theta.len())?;
        let k = self.ds.k();
        Ok(match self.kind {
            ModelKind::Conditional => ModelParams::Conditional(theta.to_vec()),
            ModelKind::Logistic => ModelParams::Logistic(LogisticParams {
                alpha: theta[0],
                beta: theta[1..].to_vec(),
            }),
            ModelKind::RandomEffect(_) => ModelParams::RandomEffect(RanefParams {
                alpha: theta[0],
                beta: theta[1..=k].to_vec(),
                u: theta[k + 1..theta.len() - 1].to_vec(),
                tau: theta[theta.len() - 1].exp(),
            }),
        })
    }

    /// Log posterior density in the sampling parameterisation; `-inf` where undefined.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let k = self.ds.k();
        let p = &self.prior;
        let coef_prior = |beta: &[f64]| -> f64 {
            beta.iter().map(|b| normal_log_density(*b, p.coef_mean, p.coef_variance)).sum()
        };
        let value = match self.kind {
            ModelKind::Conditional => cond_ll_unchecked(theta, self.ds) + coef_prior(theta),
            ModelKind::Logistic => {
                bernoulli_ll(theta[0], &theta[1..], None, self.ds)
                    + normal_log_density(theta[0], p.intercept_mean, p.intercept_variance)
                    + coef_prior(&theta[1..])
            }
            ModelKind::RandomEffect(_) => {
                let groups = self.groups.as_ref().expect("groups");
                let log_tau = theta[theta.len() - 1];
                let tau = log_tau.exp();
                let z = &theta[k + 1..theta.len() - 1];
                let scale = (-0.5 * log_tau).exp();
                let u: Vec<f64> = z.iter().map(|v| v * scale).collect();
                bernoulli_ll(theta[0], &theta[1..=k], Some((&u, groups)), self.ds)
                    + latent_log_density(z, 1.0)
                    + normal_log_density(theta[0], p.intercept_mean, p.intercept_variance)
                    + coef_prior(&theta[1..=k])
                    + gamma_log_density(tau, p.tau_shape, p.tau_rate)
                    + log_tau
            }
        };
        if value.is_nan() {
            f64::NEG_INFINITY
        } else {
            value
        }
    }

    /// Starting point and a row-major lower Cholesky factor of the proposal
    /// covariance, from the Laplace approximation where a maximum exists.
    pub fn laplace_start(&self, mle: &MleConfig) -> (Vec<f64>, Option<Vec<f64>>) {
        let dim = self.dim();
        let k = self.ds.k();
        let prior_precision = |i: usize, intercept: bool| {
            if intercept && i == 0 {
                1.0 / self.prior.intercept_variance
            } else {
                1.0 / self.prior.coef_variance
            }
        };
        let block = |fit: &MleFit, intercept: bool| -> Option<DMatrix<f64>> {
            let n = fit.estimate.len();
            let mut info = DMatrix::from_row_slice(n, n, &fit.information);
            for i in 0..n {
                info[(i, i)] += prior_precision(i, intercept);
            }
            let cov = info.cholesky()?.inverse();
            Some(cov)
        };
        let lower = |cov: DMatrix<f64>| -> Option<Vec<f64>> {
            let l = cov.cholesky()?.l();
            Some((0..l.nrows()).flat_map(|r| (0..l.ncols()).map(move |c| (r, c))).map(|(r, c)| l[(r, c)]).collect())
        };
        match self.kind {
            ModelKind::Conditional => match mle_fit(self.ds, mle) {
                Ok(fit) => {
                    let chol = block(&fit, false).and_then(lower);
                    (fit.estimate, chol)
                }
                Err(_) => (vec![0.0; dim], None),
            },
            ModelKind::Logistic => match logistic_mle(self.ds, mle) {
                Ok(fit) => {
                    let chol = block(&fit, true).and_then(lower);
                    (fit.estimate, chol)
                }
                Err(_) => (vec![0.0; dim], None),
            },
            ModelKind::RandomEffect(_) => {
                let mut init = vec![0.0; dim];
                // z and ln tau start at their unit-scale prior
                let mut cov = DMatrix::identity(dim, dim);
                if let Ok(fit) = logistic_mle(self.ds, mle) {
                    init[..=k].copy_from_slice(&fit.estimate);
                    if let Some(c) = block(&fit, true) {
                        cov.view_mut((0, 0), (k + 1, k + 1)).copy_from(&c);
                    }
                }
                (init, lower(cov))
            }
        }
    }
}
