//! Adaptive random-walk Metropolis over an arbitrary log-density.
//!
//! Proposals are `theta + step * L z` with `z` standard normal and `L` a
//! lower-triangular shape, initially the caller's (identity when absent).
//! During burn-in the log step size follows a Robbins-Monro recursion toward
//! an acceptance rate of 0.234, updated once per adaptation window, and `L`
//! is re-estimated `shape_updates` times from the Cholesky factor of the
//! covariance of recent burn-in draws, with the step reset to `2.38 / sqrt(d)`.
//! After burn-in the kernel is frozen. Chain `c` uses the ChaCha stream seeded with
//! `seed + c`, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use nalgebra::DMatrix;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// R-hat above this is reported as a convergence warning.
pub const RHAT_WARN: f64 = 1.1;
pub const MIN_KEPT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_step: f64,
    pub seed: u64,
    pub adapt_window: usize,
    pub target_acceptance: f64,
    /// Proposal covariance re-estimates during burn-in; 0 keeps the initial shape.
    pub shape_updates: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 3,
            iterations: 20_000,
            burn_in: 5_000,
            thin: 1,
            initial_step: 0.1,
            seed: 0,
            adapt_window: 50,
            target_acceptance: 0.234,
            shape_updates: 3,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.chains < 2 {
            return fail("at least two chains");
        }
        if self.burn_in >= self.iterations {
            return fail("burn-in must be shorter than the run");
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return fail("thin and adapt_window must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return fail("initial step must be positive");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return fail("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Kept draws, row-major `kept x dim`.
    pub draws: Vec<f64>,
    pub log_target: Vec<f64>,
    /// Post burn-in acceptance rate.
    pub acceptance_rate: f64,
    pub final_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub param_names: Vec<String>,
    pub dim: usize,
    pub chains: Vec<Chain>,
}

impl ChainSet {
    /// Rewrites every kept draw; the target trace is left as sampled.
    pub fn map_draws(&mut self, f: impl Fn(&[f64]) -> Vec<f64>) {
        let dim = self.dim;
        for chain in &mut self.chains {
            chain.draws = chain.draws.chunks_exact(dim).flat_map(&f).collect();
        }
    }

    /// Builds a chain set from `chains x kept x dim` draws; target trace is
    /// left as NaN and acceptance as 1.
    pub fn from_draws(param_names: Vec<String>, draws: Vec<Vec<Vec<f64>>>) -> Result<ChainSet> {
        let dim = param_names.len();
        let chains = draws
            .into_iter()
            .map(|chain| {
                if chain.iter().any(|d| d.len() != dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: chain.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
                    });
                }
                Ok(Chain {
                    log_target: vec![f64::NAN; chain.len()],
                    draws: chain.concat(),
                    acceptance_rate: 1.0,
                    final_step: f64::NAN,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ChainSet { param_names, dim, chains })
    }

    pub fn kept_per_chain(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.draws.len() / self.dim.max(1))
            .min()
            .unwrap_or(0)
    }

    /// Draws of parameter `p`, one vector per chain.
    pub fn param_draws(&self, p: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().skip(p).step_by(self.dim).copied().collect())
            .collect()
    }

    /// All kept draws of parameter `p`, chains concatenated in order.
    pub fn pooled(&self, p: usize) -> Vec<f64> {
        self.param_draws(p).concat()
    }

    /// Every kept draw vector, chains in order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(move |c| c.draws.chunks_exact(self.dim))
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for d in self.iter_draws() {
            for (s, v) in sum.iter_mut().zip(d) {
                *s += v;
            }
            n += 1;
        }
        sum.iter().map(|s| s / n as f64).collect()
    }

    /// CSV with columns `chain,iteration,<param names>`; iteration counts
    /// kept draws from 1.
    pub fn write_draws_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            },
        })?;
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.param_names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (i, d) in chain.draws.chunks_exact(self.dim).enumerate() {
                let mut rec = vec![(c + 1).to_string(), (i + 1).to_string()];
                rec.extend(d.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs `config.chains` independent chains from `init`, in parallel.
///
/// `shape` is a row-major lower-triangular `dim x dim` factor for the
/// proposal; chains after the first start from `init + L z` when it is given
/// (falling back to `init` if the target is not finite there).
pub fn run_chains<F>(
    log_target: &F,
    init: &[f64],
    shape: Option<&[f64]>,
    param_names: Vec<String>,
    config: &McmcConfig,
) -> Result<ChainSet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = init.len();
    if param_names.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: param_names.len(),
        });
    }
    if let Some(l) = shape {
        if l.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: l.len(),
            });
        }
    }
    if !log_target(init).is_finite() {
        return Err(Error::NonFiniteTarget);
    }

    let results: Vec<Result<Chain>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| scope.spawn(move || run_one(log_target, init, shape, config, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ChainSet { param_names, dim, chains })
}

fn propose(current: &[f64], step: f64, shape: Option<&[f64]>, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
    let dim = current.len();
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    match shape {
        None => {
            for ((o, c), zi) in out.iter_mut().zip(current).zip(z.iter()) {
                *o = c + step * zi;
            }
        }
        Some(l) => {
            for r in 0..dim {
                let row = &l[r * dim..r * dim + r + 1];
                let lz: f64 = row.iter().zip(&z[..=r]).map(|(a, b)| a * b).sum();
                out[r] = current[r] + step * lz;
            }
        }
    }
}

/// Lower Cholesky factor of the covariance of `rows` (row-major, `dim` wide).
fn empirical_shape(rows: &[f64], dim: usize) -> Option<Vec<f64>> {
    let n = rows.len() / dim;
    if n <= 2 * dim {
        return None;
    }
    let x = DMatrix::from_row_slice(n, dim, rows);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, dim, |r, c| x[(r, c)] - mean[c]);
    let mut cov = centred.transpose() * &centred / (n - 1) as f64;
    let ridge = 1e-10 * cov.trace().max(f64::MIN_POSITIVE) / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    let l = cov.cholesky()?.l();
    Some(l.transpose().iter().copied().collect())
}

fn run_one<F>(log_target: &F, init: &[f64], shape: Option<&[f64]>, config: &McmcConfig, chain: usize) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = init.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(chain as u64));
    let mut z = vec![0.0; dim];
    let mut current = init.to_vec();
    if chain > 0 && shape.is_some() {
        let mut jittered = vec![0.0; dim];
        propose(init, 1.0, shape, &mut rng, &mut z, &mut jittered);
        if log_target(&jittered).is_finite() {
            current = jittered;
        }
    }
    let mut current_lp = log_target(&current);
    let mut proposal = vec![0.0; dim];
    let mut shape: Option<Vec<f64>> = shape.map(<[f64]>::to_vec);
    let checkpoints: Vec<usize> = (1..=config.shape_updates)
        .map(|j| j * config.burn_in / (config.shape_updates + 1))
        .collect();
    let mut history = Vec::with_capacity(if checkpoints.is_empty() { 0 } else { config.burn_in * dim });

    let mut log_step = config.initial_step.ln();
    let mut window_accepts = 0usize;
    let mut window_index = 0usize;
    let mut kept_accepts = 0usize;
    let kept = config.kept_per_chain();
    let mut draws = Vec::with_capacity(kept * dim);
    let mut trace = Vec::with_capacity(kept);

    for t in 0..config.iterations {
        propose(&current, log_step.exp(), shape.as_deref(), &mut rng, &mut z, &mut proposal);
        let lp = log_target(&proposal);
        let u: f64 = rng.random();
        let accept = lp.is_finite() && u.ln() < lp - current_lp;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
        }
        if t < config.burn_in {
            window_accepts += usize::from(accept);
            if (t + 1) % config.adapt_window == 0 {
                window_index += 1;
                let rate = window_accepts as f64 / config.adapt_window as f64;
                log_step += (rate - config.target_acceptance) / (window_index as f64).sqrt();
                window_accepts = 0;
            }
            if !checkpoints.is_empty() {
                history.extend_from_slice(&current);
                if checkpoints.contains(&(t + 1)) {
                    // second half of the burn-in so far
                    let from = (t + 1) / 2;
                    if let Some(l) = empirical_shape(&history[from * dim..], dim) {
                        shape = Some(l);
                        log_step = (2.38 / (dim as f64).sqrt()).ln();
                        window_index = 0;
                    }
                }
            }
        } else {
            kept_accepts += usize::from(accept);
            if (t + 1 - config.burn_in).is_multiple_of(config.thin) {
                draws.extend_from_slice(&current);
                trace.push(current_lp);
            }
        }
    }
    let acceptance_rate = kept_accepts as f64 / (config.iterations - config.burn_in) as f64;
    if acceptance_rate < 0.01 {
        return Err(Error::ZeroAcceptance { chain, rate: acceptance_rate });
    }
    Ok(Chain {
        draws,
        log_target: trace,
        acceptance_rate,
        final_step: log_step.exp(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q05: f64,
    pub q95: f64,
    pub q975: f64,
    /// 95% interval excludes zero.
    pub sig_05: bool,
    /// 90% interval excludes zero.
    pub sig_10: bool,
}

impl ParamSummary {
    pub fn from_draws(name: impl Into<String>, draws: &[f64]) -> ParamSummary {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = if draws.len() > 1 {
            (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&sorted, p);
        let (q025, q05, q95, q975) = (q(0.025), q(0.05), q(0.95), q(0.975));
        let excludes_zero = |lo: f64, hi: f64| lo > 0.0 || hi < 0.0;
        ParamSummary {
            name: name.into(),
            mean,
            sd,
            q025,
            q05,
            q95,
            q975,
            sig_05: excludes_zero(q025, q975),
            sig_10: excludes_zero(q05, q95),
        }
    }

    pub fn hazard_ratio(&self) -> f64 {
        self.mean.exp()
    }
}

/// Linear interpolation between order statistics: position `(n - 1) p`
/// counted from zero.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Pools all chains' kept draws per parameter.
pub fn summarize(chains: &ChainSet) -> Result<PosteriorSummary> {
    let kept = chains.kept_per_chain();
    if kept < MIN_KEPT_DRAWS {
        return Err(Error::TooFewDraws {
            found: kept,
            required: MIN_KEPT_DRAWS,
        });
    }
    Ok(PosteriorSummary {
        params: (0..chains.dim)
            .map(|p| ParamSummary::from_draws(chains.param_names[p].clone(), &chains.pooled(p)))
            .collect(),
    })
}

/// Split-chain potential scale reduction per parameter. Each chain is cut in
/// half (dropping the middle draw when odd). Zero within-chain variance with
/// equal means reports 1.0.
pub fn gelman_rubin(chains: &ChainSet) -> Result<Vec<f64>> {
    if chains.chains.len() < 2 {
        return Err(Error::SingleChain);
    }
    let kept = chains.kept_per_chain();
    let half = kept / 2;
    if half < 2 {
        return Err(Error::TooFewDraws { found: kept, required: 4 });
    }
    Ok((0..chains.dim)
        .map(|p| {
            let splits: Vec<Vec<f64>> = chains
                .param_draws(p)
                .into_iter()
                .flat_map(|c| {
                    let c = &c[..kept];
                    [c[..half].to_vec(), c[kept - half..].to_vec()]
                })
                .collect();
            let n = half as f64;
            let means: Vec<f64> = splits.iter().map(|s| s.iter().sum::<f64>() / n).collect();
            let within = splits
                .iter()
                .zip(&means)
                .map(|(s, m)| s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
                .sum::<f64>()
                / splits.len() as f64;
            let grand = means.iter().sum::<f64>() / means.len() as f64;
            let between = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
            if within == 0.0 {
                return if between == 0.0 { 1.0 } else { f64::INFINITY };
            }
            let var_plus = (n - 1.0) / n * within + between / n;
            (var_plus / within).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn quick() -> McmcConfig {
        McmcConfig {
            iterations: 4000,
            burn_in: 1000,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = quick();
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let mut c = quick();
        c.thin = 0;
        assert!(c.validate().is_err());
        assert_eq!(McmcConfig::default().kept_per_chain(), 15_000);
    }

    #[test]
    fn non_finite_start_rejected() {
        let target = |_: &[f64]| f64::NEG_INFINITY;
        let err = run_chains(&target, &[0.0], None, vec!["x".into()], &quick()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteTarget));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = run_chains(&std_normal, &[0.0, 0.0], None, vec!["a".into(), "b".into()], &quick()).unwrap();
        let b = run_chains(&std_normal, &[0.0, 0.0], None, vec!["a".into(), "b".into()], &quick()).unwrap();
        assert_eq!(a, b);
        let mut other = quick();
        other.seed = 4;
        let c = run_chains(&std_normal, &[0.0, 0.0], None, vec!["a".into(), "b".into()], &other).unwrap();
        assert_ne!(a.chains[0].draws, c.chains[0].draws);
    }

    #[test]
    fn thinning_and_shape() {
        let mut cfg = quick();
        cfg.thin = 7;
        let l = [2.0, 0.0, 0.5, 1.0];
        let cs = run_chains(&std_normal, &[0.0, 0.0], Some(&l), vec!["a".into(), "b".into()], &cfg).unwrap();
        assert_eq!(cs.kept_per_chain(), 3000 / 7);
        assert_eq!(cs.chains[0].log_target.len(), 3000 / 7);
    }

    #[test]
    fn acceptance_in_band_for_smooth_targets() {
        for dim in [1usize, 3, 10] {
            let names = (0..dim).map(|i| format!("p{i}")).collect();
            let cs = run_chains(&std_normal, &vec![0.0; dim], None, names, &quick()).unwrap();
            for c in &cs.chains {
                assert!((0.1..=0.5).contains(&c.acceptance_rate), "dim {dim}: {}", c.acceptance_rate);
            }
        }
    }

    #[test]
    fn quantiles_of_one_to_hundred() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = ParamSummary::from_draws("x", &draws);
        assert_eq!(s.mean, 50.5);
        // position 99 * 0.025 = 2.475 -> 3 + 0.475
        assert!((s.q025 - 3.475).abs() < 1e-12);
        assert!((s.q975 - 97.525).abs() < 1e-12);
        assert!((s.q05 - 5.95).abs() < 1e-12);
        assert!((s.q95 - 95.05).abs() < 1e-12);
        assert!(s.sig_05 && s.sig_10);
    }

    #[test]
    fn degenerate_and_signed_summaries() {
        let s = ParamSummary::from_draws("z", &[0.0; 200]);
        assert_eq!((s.mean, s.q025, s.q975, s.sd), (0.0, 0.0, 0.0, 0.0));
        assert!(!s.sig_05 && !s.sig_10);

        // 90% interval excludes zero, 95% does not
        let mut d: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0 + 0.1).collect();
        d[..40].iter_mut().for_each(|v| *v = -1.0);
        let s = ParamSummary::from_draws("w", &d);
        assert!(s.sig_10 && !s.sig_05);
    }

    #[test]
    fn too_few_draws() {
        let cs = ChainSet::from_draws(vec!["x".into()], vec![vec![vec![1.0]; 99]; 2]).unwrap();
        assert!(matches!(summarize(&cs), Err(Error::TooFewDraws { found: 99, .. })));
    }

    #[test]
    fn rhat_conventions() {
        let constant = ChainSet::from_draws(vec!["x".into()], vec![vec![vec![2.0]; 200]; 3]).unwrap();
        assert_eq!(gelman_rubin(&constant).unwrap(), vec![1.0]);

        let single = ChainSet::from_draws(vec!["x".into()], vec![vec![vec![2.0]; 200]]).unwrap();
        assert!(matches!(gelman_rubin(&single), Err(Error::SingleChain)));

        let cs = run_chains(&std_normal, &[0.0], None, vec!["x".into()], &quick()).unwrap();
        let mut shifted = cs.clone();
        shifted.chains[1].draws.iter_mut().for_each(|v| *v += 100.0);
        assert!(gelman_rubin(&cs).unwrap()[0] < 1.05);
        assert!(gelman_rubin(&shifted).unwrap()[0] > 10.0);
    }

    #[test]
    fn proposal_shape_learns_correlation() {
        // unit variances, correlation 0.99, scales 1 and 100
        let rho: f64 = 0.99;
        let target = |x: &[f64]| {
            let (a, b) = (x[0], x[1] / 100.0);
            -(a * a - 2.0 * rho * a * b + b * b) / (2.0 * (1.0 - rho * rho))
        };
        let config = McmcConfig { iterations: 20_000, burn_in: 5_000, seed: 4, ..Default::default() };
        let names = vec!["a".to_string(), "b".to_string()];
        let cs = run_chains(&target, &[0.0, 0.0], None, names.clone(), &config).unwrap();
        assert!(gelman_rubin(&cs).unwrap().iter().all(|r| *r < 1.05));
        let sd = summarize(&cs).unwrap().params[1].sd;
        assert!((sd / 100.0 - 1.0).abs() < 0.1, "sd {sd}");

        let fixed = McmcConfig { shape_updates: 0, ..config };
        let stuck = run_chains(&target, &[0.0, 0.0], None, names, &fixed).unwrap();
        let sd_fixed = summarize(&stuck).unwrap().params[1].sd;
        assert!((sd_fixed / 100.0 - 1.0).abs() > (sd / 100.0 - 1.0).abs());
    }
}
