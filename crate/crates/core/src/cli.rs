//! `arterial-risk` command line.
//!
//! Settings resolve in order: command-line flag, `--config` file, built-in
//! default. The seed also falls back to `ARTERIAL_RISK_SEED` before the
//! default. Exit codes: 0 success, 1 data error, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{predict_logistic_odds, predict_relative_odds, roc_auc};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig, FittedModel};
use crate::ingest::{load_corpus, write_corpus, CorpusPaths, LoadOptions, SliceConfig, VolumeAllocation};
use crate::kv::KeyValues;
use crate::matching::{build_matched_dataset, load_dataset, ratio_sweep, save_dataset, DatasetManifest, FeatureSpec};
use crate::models::{Grouping, ModelKind, PriorSpec};
use crate::report::{fit_table, render_comparison, render_sweep, render_table, file_sha256, CoefficientFile, Format};
use crate::sampler::McmcConfig;
use crate::simulator::{simulate, SimConfig, SimMode, SimOutput};

pub const SEED_ENV: &str = "ARTERIAL_RISK_SEED";

#[derive(Debug, Parser)]
#[command(name = "arterial-risk", version, about = "Crash risk models for signalized arterials from matched case-control data")]
struct Cli {
    /// key=value settings file; flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus directory and print per-source record counts
    Ingest {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long)]
        station: Option<String>,
    },
    /// Build a matched case-control dataset from a corpus
    Match {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "M")]
        ratio: Option<usize>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        station: Option<String>,
        /// uniform or slice-start
        #[arg(long)]
        volume_allocation: Option<String>,
    },
    /// Fit one model and write its summary table and coefficients
    Fit {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        grouping: Option<String>,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        common: Common,
        /// also write every kept draw
        #[arg(long)]
        draws: bool,
    },
    /// Fit the conditional, pooled logistic and random-effect models side by side
    Compare {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long)]
        grouping: Option<String>,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score a dataset with a coefficient file and write scores and the ROC curve
    Score {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        coefficients: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic matched dataset or raw corpus with its truth file
    Simulate {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, value_name = "N")]
        strata: Option<usize>,
        #[arg(long, value_name = "M")]
        m: Option<usize>,
        /// comma-separated true coefficients, one per feature
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the conditional model at each control-to-case ratio in a range
    SweepRatio {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// inclusive range such as 1..10
        #[arg(long, value_name = "A..B")]
        ratios: Option<String>,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        station: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// comma-separated feature names, e.g. avg_speed_s2,up_vol_s2,rainy
    #[arg(long, value_name = "LIST")]
    features: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// csv or markdown
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
struct McmcArgs {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
}

/// Flag values backed by the config file.
struct Settings {
    file: KeyValues,
    path: PathBuf,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings> {
        Ok(match path {
            Some(p) => Settings {
                file: KeyValues::read(p)?,
                path: p.to_path_buf(),
            },
            None => Settings {
                file: KeyValues::new(),
                path: PathBuf::new(),
            },
        })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None if self.file.get(key).is_some() => self.file.require(key, &self.path).map(Some),
            None => Ok(None),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} is not an unsigned integer: `{v}`"))),
            Err(_) => Ok(0),
        }
    }

    fn features(&self, common: &Common) -> Result<FeatureSpec> {
        match self.get(common.features.clone(), "features")? {
            Some(list) => FeatureSpec::parse(&list),
            None => Ok(FeatureSpec::default()),
        }
    }

    fn format(&self, common: &Common) -> Result<Format> {
        match self.get(common.format.clone(), "format")? {
            Some(f) => f.parse(),
            None => Ok(Format::Csv),
        }
    }

    fn out(&self, common: &Common) -> Result<PathBuf> {
        let dir = self.or(common.out.clone(), "out", PathBuf::from("."))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn grouping(&self, flag: Option<String>) -> Result<Grouping> {
        match self.get(flag, "grouping")? {
            Some(g) => g.parse(),
            None => Ok(Grouping::default()),
        }
    }

    fn load_options(&self, station: Option<String>) -> Result<LoadOptions> {
        Ok(LoadOptions {
            weather_station: self.get(station, "station")?,
        })
    }

    fn slice_config(&self, allocation: Option<String>) -> Result<SliceConfig> {
        let mut c = SliceConfig::default();
        c.min_speed_sample = self.or(None, "min_speed_sample", c.min_speed_sample)?;
        c.volume_allocation = match self.get(allocation, "volume_allocation")?.as_deref() {
            None | Some("uniform") => VolumeAllocation::Uniform,
            Some("slice-start") => VolumeAllocation::SliceStart,
            Some(other) => return Err(Error::InvalidConfig(format!("unknown volume allocation `{other}`"))),
        };
        Ok(c)
    }

    fn fit_config(&self, mcmc: &McmcArgs, seed: u64) -> Result<FitConfig> {
        let d = McmcConfig::default();
        let p = PriorSpec::default();
        Ok(FitConfig {
            prior: PriorSpec {
                coef_mean: self.or(None, "prior.coef_mean", p.coef_mean)?,
                coef_variance: self.or(None, "prior.coef_variance", p.coef_variance)?,
                intercept_mean: self.or(None, "prior.intercept_mean", p.intercept_mean)?,
                intercept_variance: self.or(None, "prior.intercept_variance", p.intercept_variance)?,
                tau_shape: self.or(None, "prior.tau_shape", p.tau_shape)?,
                tau_rate: self.or(None, "prior.tau_rate", p.tau_rate)?,
            },
            mcmc: McmcConfig {
                chains: self.or(mcmc.chains, "chains", d.chains)?,
                iterations: self.or(mcmc.iters, "iters", d.iterations)?,
                burn_in: self.or(mcmc.burnin, "burnin", d.burn_in)?,
                thin: self.or(None, "thin", d.thin)?,
                initial_step: self.or(None, "initial_step", d.initial_step)?,
                seed,
                adapt_window: self.or(None, "adapt_window", d.adapt_window)?,
                target_acceptance: self.or(None, "target_acceptance", d.target_acceptance)?,
                shape_updates: self.or(None, "shape_updates", d.shape_updates)?,
            },
            mle: Default::default(),
        })
    }
}

fn parse_ratios(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidConfig(format!("ratios must look like A..B, got `{text}`"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn parse_beta(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad coefficient `{s}`")))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn warn_rhat(fitted: &FittedModel, err: &mut dyn Write) {
    for (name, r) in fitted.rhat_warnings() {
        let _ = writeln!(err, "warning: {} {name} R-hat {r:.3} above {}", fitted.kind.name(), crate::sampler::RHAT_WARN);
    }
    if fitted.dic.p_d < 0.0 {
        let _ = writeln!(err, "warning: {} negative effective parameter count {:.3}", fitted.kind.name(), fitted.dic.p_d);
    }
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { corpus, station } => {
            let c = load_corpus(&CorpusPaths::in_dir(&corpus), &s.load_options(station)?)?;
            let n = c.counts();
            let (start, end) = c.time_range();
            let mut kv = KeyValues::new();
            kv.set("crashes", n.crashes)
                .set("bluetooth", n.bluetooth)
                .set("volumes", n.volumes)
                .set("phases", n.phases)
                .set("weather", n.weather)
                .set("segments", n.segments)
                .set("range_start", start)
                .set("range_end", end);
            write!(out, "{}", kv.to_text()).map_err(stdout_error)?;
        }
        Command::Match {
            corpus,
            ratio,
            common,
            station,
            volume_allocation,
        } => {
            let c = load_corpus(&CorpusPaths::in_dir(&corpus), &s.load_options(station)?)?;
            let m = s.or(ratio, "ratio", 8)?;
            let seed = s.seed(common.seed)?;
            let features = s.features(&common)?;
            let outcome = build_matched_dataset(&c, m, &features, seed, &s.slice_config(volume_allocation)?)?;
            for d in &outcome.dropped {
                let _ = writeln!(
                    err,
                    "dropped crash {}: {} viable controls{}",
                    d.crash_id,
                    d.viable_controls,
                    if d.case_viable { "" } else { ", crash window incomplete" }
                );
            }
            let path = s.out(&common)?.join("dataset.csv");
            let manifest = DatasetManifest::for_dataset(&outcome.dataset, seed, outcome.dropped.len(), "corpus");
            save_dataset(&outcome.dataset, &manifest, &path)?;
            writeln!(
                out,
                "strata={}\nobservations={}\ndropped={}",
                outcome.dataset.n_strata(),
                outcome.dataset.total_observations(),
                outcome.dropped.len()
            )
            .map_err(stdout_error)?;
        }
        Command::Fit {
            dataset,
            model,
            grouping,
            mcmc,
            common,
            draws,
        } => {
            let (ds, _) = load_dataset(&dataset)?;
            let grouping = s.grouping(grouping)?;
            let kind = match s.get(model, "model")?.as_deref() {
                None | Some("conditional") => ModelKind::Conditional,
                Some("logistic") => ModelKind::Logistic,
                Some("ranef") => ModelKind::RandomEffect(grouping),
                Some(other) => return Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
            };
            let config = s.fit_config(&mcmc, s.seed(common.seed)?)?;
            let format = s.format(&common)?;
            let dir = s.out(&common)?;
            let fitted = fit_model(&ds, kind, &config)?;
            warn_rhat(&fitted, err);
            let text = render_table(&fit_table(&fitted), format);
            write_text(&dir.join(format!("fit_{}.{}", kind.name(), format.extension())), &text)?;
            CoefficientFile::from_fit(&fitted, &config.prior, ds.feature_names(), file_sha256(&dataset)?)
                .write(&dir.join(format!("coefficients_{}.kv", kind.name())))?;
            if draws {
                fitted.chains.write_draws_csv(&dir.join(format!("draws_{}.csv", kind.name())))?;
            }
            write!(out, "{text}").map_err(stdout_error)?;
        }
        Command::Compare {
            dataset,
            grouping,
            mcmc,
            common,
        } => {
            let (ds, _) = load_dataset(&dataset)?;
            let kinds = [
                ModelKind::Conditional,
                ModelKind::Logistic,
                ModelKind::RandomEffect(s.grouping(grouping)?),
            ];
            let config = s.fit_config(&mcmc, s.seed(common.seed)?)?;
            let format = s.format(&common)?;
            let dir = s.out(&common)?;
            let fits: Vec<Result<FittedModel>> = std::thread::scope(|scope| {
                let handles: Vec<_> = kinds
                    .iter()
                    .map(|&k| {
                        let (ds, config) = (&ds, &config);
                        scope.spawn(move || fit_model(ds, k, config))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect()
            });
            let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
            for f in &fits {
                warn_rhat(f, err);
            }
            let tables: Vec<_> = fits.iter().map(fit_table).collect();
            let text = render_comparison(&tables, format);
            write_text(&dir.join(format!("compare.{}", format.extension())), &text)?;
            write!(out, "{text}").map_err(stdout_error)?;
        }
        Command::Score {
            dataset,
            coefficients,
            common,
        } => {
            let (ds, _) = load_dataset(&dataset)?;
            let coef = CoefficientFile::read(&coefficients)?;
            if coef.features != ds.feature_names() {
                return Err(Error::InvalidConfig(format!(
                    "coefficients are for [{}], dataset has [{}]",
                    coef.features.join(","),
                    ds.feature_names().join(",")
                )));
            }
            let scores = match (coef.kind, coef.intercept) {
                (ModelKind::Conditional, _) | (_, None) => predict_relative_odds(&coef.beta, &ds)?,
                (_, Some(alpha)) => predict_logistic_odds(alpha, &coef.beta, None, &ds)?,
            };
            let auc = roc_auc(&scores)?;
            let dir = s.out(&common)?;
            scores.write_csv(&dir.join("scores.csv"))?;
            auc.write_curve_csv(&dir.join("roc.csv"))?;
            writeln!(out, "auc={}\nn_pos={}\nn_neg={}", auc.auc, auc.n_pos, auc.n_neg).map_err(stdout_error)?;
        }
        Command::Simulate {
            mode,
            strata,
            m,
            beta,
            weeks,
            segments,
            common,
        } => {
            let features = s.features(&common)?;
            let mut config = SimConfig::new(features, vec![]);
            config.true_beta = match s.get(beta, "beta")? {
                Some(b) => parse_beta(&b)?,
                None if config.features == FeatureSpec::default() => SimConfig::default().true_beta,
                None => return Err(Error::InvalidConfig("--beta is required with custom --features".into())),
            };
            config.mode = match s.get(mode, "mode")? {
                Some(m) => m.parse()?,
                None => SimMode::Matched,
            };
            config.n_strata = s.or(strata, "strata", config.n_strata)?;
            config.m = s.or(m, "m", config.m)?;
            config.segments = s.or(segments, "segments", config.segments)?;
            config.corpus.weeks = s.or(weeks, "weeks", config.corpus.weeks)?;
            config.seed = s.seed(common.seed)?;
            let dir = s.out(&common)?;
            let result = simulate(&config)?;
            match &result.output {
                SimOutput::Matched(ds) => {
                    let manifest = DatasetManifest::for_dataset(ds, config.seed, 0, "simulated");
                    save_dataset(ds, &manifest, &dir.join("dataset.csv"))?;
                    writeln!(out, "strata={}\nobservations={}", ds.n_strata(), ds.total_observations())
                        .map_err(stdout_error)?;
                }
                SimOutput::Corpus(records) => {
                    write_corpus(records, &dir)?;
                    writeln!(out, "crashes={}\nbluetooth={}", records.crashes.len(), records.travel_times.len())
                        .map_err(stdout_error)?;
                }
            }
            result.truth.write(&dir.join("truth.kv"))?;
        }
        Command::SweepRatio {
            corpus,
            ratios,
            mcmc,
            common,
            station,
        } => {
            let c = load_corpus(&CorpusPaths::in_dir(&corpus), &s.load_options(station)?)?;
            let ratios = parse_ratios(&s.or(ratios, "ratios", "1..10".to_string())?)?;
            let seed = s.seed(common.seed)?;
            let config = s.fit_config(&mcmc, seed)?;
            let rows = ratio_sweep(&c, &ratios, &s.features(&common)?, &config, seed, &s.slice_config(None)?)?;
            let format = s.format(&common)?;
            let text = render_sweep(&rows, format);
            write_text(&s.out(&common)?.join(format!("sweep.{}", format.extension())), &text)?;
            write!(out, "{text}").map_err(stdout_error)?;
        }
    }
    Ok(())
}

/// Runs the command line with explicit output streams and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
