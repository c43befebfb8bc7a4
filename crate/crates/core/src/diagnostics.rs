//! Hazard ratios, deviance and DIC, relative-odds scoring and ROC/AUC.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matching::MatchedDataset;
use crate::models::{
    cond_log_likelihood, logistic_log_likelihood, ranef_data_log_likelihood, Groups, ModelKind, ModelParams,
    Posterior, PriorSpec,
};
use crate::sampler::{ChainSet, PosteriorSummary, MIN_KEPT_DRAWS};

/// `exp(mean)` for every summarised parameter.
pub fn hazard_ratios(summary: &PosteriorSummary) -> Vec<(String, f64)> {
    summary
        .params
        .iter()
        .map(|p| (p.name.clone(), p.mean.exp()))
        .collect()
}

/// Minus twice the model log-likelihood. The random-effect model is scored
/// given its group intercepts, without their density; priors never enter.
pub fn deviance(params: &ModelParams, ds: &MatchedDataset, groups: Option<&Groups>) -> Result<f64> {
    let ll = match params {
        ModelParams::Conditional(beta) => cond_log_likelihood(beta, ds)?,
        ModelParams::Logistic(p) => logistic_log_likelihood(p, ds)?,
        ModelParams::RandomEffect(p) => {
            let groups = groups.ok_or_else(|| Error::InvalidConfig("random-effect model needs groups".into()))?;
            ranef_data_log_likelihood(p, ds, groups)?
        }
    };
    Ok(-2.0 * ll)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicResult {
    /// Posterior mean deviance.
    pub d_bar: f64,
    /// Deviance at the posterior mean.
    pub d_hat: f64,
    /// Effective number of parameters, `d_bar - d_hat`.
    pub p_d: f64,
    pub dic: f64,
}

impl DicResult {
    pub fn from_parts(d_bar: f64, d_hat: f64) -> DicResult {
        let p_d = d_bar - d_hat;
        DicResult {
            d_bar,
            d_hat,
            p_d,
            dic: d_bar + p_d,
        }
    }
}

/// DIC from the kept draws. The posterior mean is taken in the sampling
/// parameterisation (for the random-effect model it includes the group
/// intercepts).
pub fn dic(chains: &ChainSet, kind: ModelKind, ds: &MatchedDataset) -> Result<DicResult> {
    let kept = chains.kept_per_chain();
    if kept < MIN_KEPT_DRAWS {
        return Err(Error::TooFewDraws {
            found: kept,
            required: MIN_KEPT_DRAWS,
        });
    }
    let posterior = Posterior::new(kind, ds, PriorSpec::default())?;
    let dev = |theta: &[f64]| -> Result<f64> { deviance(&posterior.unpack(theta)?, ds, posterior.groups()) };
    let mut total = 0.0;
    let mut n = 0usize;
    // rejected proposals repeat the previous draw
    let mut last: Option<(&[f64], f64)> = None;
    for draw in chains.iter_draws() {
        let d = match last {
            Some((prev, d)) if prev == draw => d,
            _ => dev(draw)?,
        };
        last = Some((draw, d));
        total += d;
        n += 1;
    }
    let d_bar = total / n as f64;
    let d_hat = dev(&chains.posterior_mean())?;
    Ok(DicResult::from_parts(d_bar, d_hat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub stratum_id: usize,
    pub is_crash: bool,
    pub log_odds: f64,
    pub raw_odds: f64,
    /// `raw_odds / max(raw_odds)`
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<Score>,
}

impl ScoreSet {
    fn from_log_odds(ds: &MatchedDataset, mut log_odds: impl FnMut(usize, &[f64]) -> f64) -> ScoreSet {
        let per = ds.m() + 1;
        let scores = ds
            .rows()
            .enumerate()
            .map(|(r, x)| {
                let lo = log_odds(r / per, x);
                Score {
                    stratum_id: ds.strata()[r / per].stratum_id,
                    is_crash: ds.row_is_case(r),
                    log_odds: lo,
                    raw_odds: lo.exp(),
                    normalized: f64::NAN,
                }
            })
            .collect();
        ScoreSet { scores }
    }

    pub fn labels(&self) -> Vec<bool> {
        self.scores.iter().map(|s| s.is_crash).collect()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.raw_odds).collect()
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.normalized).collect()
    }

    /// CSV `stratum_id,is_crash,raw_odds,normalized`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record(["stratum_id", "is_crash", "raw_odds", "normalized"])?;
        for s in &self.scores {
            w.write_record([
                s.stratum_id.to_string(),
                u8::from(s.is_crash).to_string(),
                s.raw_odds.to_string(),
                s.normalized.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    })
}

/// Odds of `x1` relative to `x2` in the same stratum: `exp(beta . (x1 - x2))`.
pub fn relative_odds(beta: &[f64], x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != beta.len() || x2.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            found: x1.len().max(x2.len()),
        });
    }
    Ok(beta
        .iter()
        .zip(x1.iter().zip(x2))
        .map(|(b, (a, c))| b * (a - c))
        .sum::<f64>()
        .exp())
}

/// Odds of each observation relative to the mean of its stratum's controls,
/// `exp(beta . (x - mean_controls))`, normalised by the maximum.
pub fn predict_relative_odds(beta: &[f64], ds: &MatchedDataset) -> Result<ScoreSet> {
    let k = ds.k();
    if beta.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: beta.len(),
        });
    }
    let m = ds.m();
    let control_means: Vec<Vec<f64>> = (0..ds.n_strata())
        .map(|i| {
            let rows = ds.stratum_rows(i);
            (0..k)
                .map(|j| rows[k..].iter().skip(j).step_by(k).sum::<f64>() / m as f64)
                .collect()
        })
        .collect();
    let scores = ScoreSet::from_log_odds(ds, |i, x| {
        beta.iter()
            .zip(x.iter().zip(&control_means[i]))
            .map(|(b, (v, mu))| b * (v - mu))
            .sum()
    });
    normalize_scores(scores)
}

/// Odds `exp(alpha + u_g + beta . x)` of the pooled models, normalised.
pub fn predict_logistic_odds(
    alpha: f64,
    beta: &[f64],
    effects: Option<(&[f64], &Groups)>,
    ds: &MatchedDataset,
) -> Result<ScoreSet> {
    if beta.len() != ds.k() {
        return Err(Error::DimensionMismatch {
            expected: ds.k(),
            found: beta.len(),
        });
    }
    let scores = ScoreSet::from_log_odds(ds, |i, x| {
        let u = effects.map_or(0.0, |(u, g)| u[g.of_stratum(i)]);
        alpha + u + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    });
    normalize_scores(scores)
}

/// Divides every odds by the largest one (computed on the log scale, so
/// overflowing odds still normalise).
pub fn normalize_scores(mut scores: ScoreSet) -> Result<ScoreSet> {
    let max = scores
        .scores
        .iter()
        .map(|s| s.log_odds)
        .fold(f64::NEG_INFINITY, f64::max);
    if scores.scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    for s in &mut scores.scores {
        s.normalized = (s.log_odds - max).exp();
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucResult {
    pub auc: f64,
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)`, one point per distinct score.
    pub curve: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl AucResult {
    /// CSV `threshold,fpr,tpr`.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.curve {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// ROC over the normalised odds.
pub fn roc_auc(scores: &ScoreSet) -> Result<AucResult> {
    roc_auc_values(&scores.normalized(), &scores.labels())
}

/// Mann-Whitney AUC with half credit for ties, plus the threshold-swept ROC.
pub fn roc_auc_values(scores: &[f64], labels: &[bool]) -> Result<AucResult> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // count of correctly ordered pairs, ties as one half
    let mut u = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (mut p, mut q) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        let negatives_below = n_neg - fp - q;
        u += (p * negatives_below) as f64 + 0.5 * (p * q) as f64;
        tp += p;
        fp += q;
        curve.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(AucResult {
        auc: u / (n_pos * n_neg) as f64,
        curve,
        n_pos,
        n_neg,
    })
}
