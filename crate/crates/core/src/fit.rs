//! One-call Bayesian fit of a model to a matched dataset.

use crate::diagnostics::{dic, predict_logistic_odds, predict_relative_odds, roc_auc, AucResult, DicResult, ScoreSet};
use crate::error::Result;
use crate::matching::MatchedDataset;
use crate::models::{MleConfig, ModelKind, ModelParams, Posterior, PriorSpec};
use crate::sampler::{gelman_rubin, run_chains, summarize, ChainSet, McmcConfig, PosteriorSummary, RHAT_WARN};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitConfig {
    pub prior: PriorSpec,
    pub mcmc: McmcConfig,
    pub mle: MleConfig,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub chains: ChainSet,
    pub summary: PosteriorSummary,
    /// Split R-hat per sampled parameter, in `chains.param_names` order.
    pub rhat: Vec<f64>,
    pub dic: DicResult,
    pub scores: ScoreSet,
    pub auc: AucResult,
    /// Posterior mean in model form.
    pub posterior_mean: ModelParams,
}

impl FittedModel {
    /// Parameters whose R-hat exceeds the warning level.
    pub fn rhat_warnings(&self) -> Vec<(&str, f64)> {
        self.chains
            .param_names
            .iter()
            .zip(&self.rhat)
            .filter(|(_, r)| **r > RHAT_WARN || r.is_nan())
            .map(|(n, r)| (n.as_str(), *r))
            .collect()
    }

    /// Summaries shown in reports: intercept, features and `tau` for the
    /// random-effect model (group intercepts omitted).
    pub fn reported(&self) -> Vec<crate::sampler::ParamSummary> {
        let mut out = Vec::new();
        for (i, p) in self.summary.params.iter().enumerate() {
            let name = &self.chains.param_names[i];
            if name.starts_with("u[") {
                continue;
            }
            if name == "log_tau" {
                let tau: Vec<f64> = self.chains.pooled(i).iter().map(|v| v.exp()).collect();
                out.push(crate::sampler::ParamSummary::from_draws("tau", &tau));
            } else {
                out.push(p.clone());
            }
        }
        out
    }
}

/// Samples the posterior of `kind`, then summarises, checks convergence and
/// scores the dataset at the posterior mean.
pub fn fit_model(ds: &MatchedDataset, kind: ModelKind, config: &FitConfig) -> Result<FittedModel> {
    let posterior = Posterior::new(kind, ds, config.prior)?;
    config.mcmc.validate()?;
    let (init, shape) = posterior.laplace_start(&config.mle);
    let target = |theta: &[f64]| posterior.log_density(theta);
    let mut chains = run_chains(&target, &init, shape.as_deref(), posterior.param_names(), &config.mcmc)?;
    chains.map_draws(|theta| posterior.to_model_scale(theta));
    let summary = summarize(&chains)?;
    let rhat = gelman_rubin(&chains)?;
    let dic = dic(&chains, kind, ds)?;
    let posterior_mean = posterior.unpack(&chains.posterior_mean())?;
    let scores = match &posterior_mean {
        ModelParams::Conditional(beta) => predict_relative_odds(beta, ds)?,
        ModelParams::Logistic(p) => predict_logistic_odds(p.alpha, &p.beta, None, ds)?,
        ModelParams::RandomEffect(p) => {
            let groups = posterior.groups().expect("random-effect posterior has groups");
            predict_logistic_odds(p.alpha, &p.beta, Some((&p.u, groups)), ds)?
        }
    };
    let auc = roc_auc(&scores)?;
    Ok(FittedModel {
        kind,
        chains,
        summary,
        rhat,
        dic,
        scores,
        auc,
        posterior_mean,
    })
}
