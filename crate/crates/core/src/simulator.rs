//! Synthetic data with known coefficients.
//!
//! Matched mode draws strata directly: `m + 1` feature vectors per stratum,
//! then the case is chosen with probability `softmax(beta . x)` over the
//! members, which is exactly the conditional model's within-stratum law.
//! Corpus mode writes raw sensor records and places crashes by thinning a
//! logistic hazard over a 10-minute grid of candidate windows, so the full
//! ingest and matching path can be exercised end to end.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::ingest::{
    Approach, CorpusRecords, CrashEvent, PhaseRecord, RawCorpus, SegmentMeta, SliceConfig, TravelTimeRecord,
    VolumeRecord, WeatherRecord, SLICE_SECONDS, VOLUME_INTERVAL_SECONDS,
};
use crate::kv::KeyValues;
use crate::matching::{window_features, Feature, FeatureSpec, MatchKey, MatchedDataset, Observation, SliceField, Stratum};
use crate::time::{Timestamp, HOUR, MINUTE, WEEK};

/// Monday 2017-03-06 00:00 UTC.
pub const SIM_START: Timestamp = Timestamp(1_488_758_400);
/// Spacing of candidate crash windows in corpus mode.
pub const CRASH_GRID_SECONDS: i64 = 10 * MINUTE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureDist {
    Normal { mean: f64, sd: f64 },
    Poisson { rate: f64 },
    /// `shared`: one draw per stratum, copied to every member.
    Bernoulli { p: f64, shared: bool },
}

impl FeatureDist {
    /// Defaults by feature kind, on the scale of the observed aggregates.
    pub fn default_for(feature: &Feature) -> FeatureDist {
        match feature {
            Feature::Slice { field, .. } => match field {
                SliceField::AvgSpeed => FeatureDist::Normal { mean: 40.0, sd: 10.0 },
                SliceField::CvSpeed => FeatureDist::Normal { mean: 0.2, sd: 0.05 },
                SliceField::UpVol | SliceField::DownVol => FeatureDist::Poisson { rate: 100.0 },
                SliceField::GreenRatio => FeatureDist::Normal { mean: 0.45, sd: 0.1 },
            },
            Feature::Rainy => FeatureDist::Bernoulli { p: 0.15, shared: false },
            Feature::Visibility => FeatureDist::Normal { mean: 9.0, sd: 1.5 },
            Feature::Precipitation => FeatureDist::Normal { mean: 0.02, sd: 0.01 },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FeatureDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            FeatureDist::Poisson { rate } => rate.is_finite() && rate > 0.0,
            FeatureDist::Bernoulli { p, .. } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad feature distribution {self:?}")))
        }
    }

    fn shared(&self) -> bool {
        matches!(self, FeatureDist::Bernoulli { shared: true, .. })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            FeatureDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            FeatureDist::Poisson { rate } => Poisson::new(rate).expect("validated rate").sample(rng),
            FeatureDist::Bernoulli { p, .. } => {
                if Bernoulli::new(p).expect("validated p").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    #[default]
    Matched,
    Corpus,
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(SimMode::Matched),
            "corpus" => Ok(SimMode::Corpus),
            _ => Err(Error::InvalidConfig(format!("unknown simulation mode `{s}`"))),
        }
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::Matched => "matched",
            SimMode::Corpus => "corpus",
        })
    }
}

/// Raw-record settings for corpus mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    pub weeks: usize,
    /// Mean Bluetooth detections per 5 minutes per segment.
    pub detection_rate: f64,
    /// Mean speed state (km/h) and its spread.
    pub speed_mean: f64,
    pub speed_sd: f64,
    /// Lag-one correlation of the 5-minute speed state.
    pub speed_persistence: f64,
    /// Mean intersection volume per 5 minutes.
    pub volume_rate: f64,
    /// Long-run share of rainy hours.
    pub rain_share: f64,
    /// Signal cycle length; `None` omits phase records.
    pub cycle_seconds: Option<i64>,
    pub green_seconds: i64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            weeks: 8,
            detection_rate: 6.0,
            speed_mean: 40.0,
            speed_sd: 10.0,
            speed_persistence: 0.8,
            volume_rate: 100.0,
            rain_share: 0.15,
            cycle_seconds: Some(150),
            green_seconds: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub true_beta: Vec<f64>,
    pub features: FeatureSpec,
    /// One entry per feature.
    pub feature_model: Vec<FeatureDist>,
    /// Matched mode: number of strata. Corpus mode: expected number of crashes.
    pub n_strata: usize,
    pub m: usize,
    pub segments: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub corpus: CorpusSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::new(FeatureSpec::default(), vec![-0.03, 0.01, 0.8])
    }
}

impl SimConfig {
    /// Default distributions for `features`, 500 strata at 1:8.
    pub fn new(features: FeatureSpec, true_beta: Vec<f64>) -> SimConfig {
        SimConfig {
            feature_model: features.0.iter().map(FeatureDist::default_for).collect(),
            features,
            true_beta,
            n_strata: 500,
            m: 8,
            segments: 4,
            seed: 0,
            mode: SimMode::Matched,
            corpus: CorpusSettings::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.true_beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_strata == 0 || self.m == 0 || self.segments == 0 {
            return fail("n_strata, m and segments must be positive".into());
        }
        if self.features.len() != self.k() || self.feature_model.len() != self.k() {
            return fail(format!(
                "{} coefficients for {} features and {} distributions",
                self.k(),
                self.features.len(),
                self.feature_model.len()
            ));
        }
        if self.true_beta.iter().any(|b| !b.is_finite()) {
            return fail("coefficients must be finite".into());
        }
        for d in &self.feature_model {
            d.validate()?;
        }
        let c = &self.corpus;
        if self.mode == SimMode::Corpus {
            if c.weeks < 2 {
                return fail("corpus needs at least two weeks".into());
            }
            if !(c.detection_rate > 0.0 && c.volume_rate > 0.0 && c.speed_mean > 0.0 && c.speed_sd >= 0.0) {
                return fail("corpus rates must be positive".into());
            }
            if !(0.0..1.0).contains(&c.speed_persistence) || !(0.0..1.0).contains(&c.rain_share) {
                return fail("persistence and rain share must lie in [0, 1)".into());
            }
            if let Some(cycle) = c.cycle_seconds {
                if cycle <= 0 || c.green_seconds <= 0 || c.green_seconds >= cycle {
                    return fail("green time must be shorter than the cycle".into());
                }
            }
        }
        Ok(())
    }

    fn truth(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("mode", self.mode)
            .set("seed", self.seed)
            .set("n_strata", self.n_strata)
            .set("m", self.m)
            .set("segments", self.segments)
            .set("features", self.features.names().join(","));
        for (name, b) in self.features.names().iter().zip(&self.true_beta) {
            kv.set(format!("beta.{name}"), b);
        }
        kv
    }
}

#[derive(Debug, Clone)]
pub enum SimOutput {
    Matched(MatchedDataset),
    Corpus(CorpusRecords),
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub output: SimOutput,
    pub true_beta: Vec<f64>,
    /// Generation settings and outcomes, written as the truth side-car.
    pub truth: KeyValues,
}

pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    match config.mode {
        SimMode::Matched => simulate_matched(config),
        SimMode::Corpus => simulate_corpus(config),
    }
}

fn stratum_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index drawn with probability proportional to `exp(eta)`.
pub fn softmax_choice<R: Rng>(eta: &[f64], rng: &mut R) -> usize {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

/// Member feature rows of one stratum, unordered.
fn draw_members<R: Rng>(config: &SimConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let shared: Vec<f64> = config.feature_model.iter().map(|d| d.sample(rng)).collect();
    (0..=config.m)
        .map(|_| {
            config
                .feature_model
                .iter()
                .zip(&shared)
                .map(|(d, s)| if d.shared() { *s } else { d.sample(rng) })
                .collect()
        })
        .collect()
}

/// Stratum `i` uses ChaCha stream `i` of `seed`.
pub fn simulate_matched(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let strata = (0..config.n_strata)
        .map(|i| {
            let mut rng = stratum_rng(config.seed, i as u64);
            let mut members = draw_members(config, &mut rng);
            let eta: Vec<f64> = members
                .iter()
                .map(|x| x.iter().zip(&config.true_beta).map(|(v, b)| v * b).sum())
                .collect();
            let case = softmax_choice(&eta, &mut rng);
            let case_x = members.remove(case);

            let stratum_id = i + 1;
            let segment_id = format!("S{}", i % config.segments + 1);
            let anchor0 = SIM_START + (i as i64 * 7 % 1440) * MINUTE;
            let obs = |j: usize, x: Vec<f64>| Observation {
                stratum_id,
                is_crash: j == 0,
                anchor: anchor0 + j as i64 * WEEK,
                segment_id: segment_id.clone(),
                x,
            };
            Stratum {
                stratum_id,
                key: MatchKey::of(&segment_id, anchor0),
                case: obs(0, case_x),
                controls: members.into_iter().enumerate().map(|(j, x)| obs(j + 1, x)).collect(),
            }
        })
        .collect();
    let dataset = MatchedDataset::new(config.features.names(), strata)?;
    Ok(SimResult {
        output: SimOutput::Matched(dataset),
        true_beta: config.true_beta.clone(),
        truth: config.truth(),
    })
}

fn intersection(i: usize) -> String {
    format!("I{i}")
}

/// Sensor records without crashes. Each source has its own ChaCha stream.
fn sensor_records(config: &SimConfig) -> CorpusRecords {
    let c = &config.corpus;
    let span = c.weeks as i64 * WEEK;
    let mut records = CorpusRecords::default();

    let mut rng = stratum_rng(config.seed, 0);
    for s in 1..=config.segments {
        records.segments.push(SegmentMeta {
            segment_id: format!("S{s}"),
            length_m: (rng.random_range(400.0..800.0_f64) * 10.0).round() / 10.0,
            upstream_intersection_id: intersection(s),
            downstream_intersection_id: intersection(s + 1),
        });
    }

    let mut rng = stratum_rng(config.seed, 1);
    let detections = Poisson::new(c.detection_rate).expect("positive rate");
    let jitter = Normal::new(0.0, 0.1).expect("finite sd");
    let innovation = c.speed_sd * (1.0 - c.speed_persistence.powi(2)).sqrt();
    for seg in &records.segments {
        let mut state = c.speed_mean + c.speed_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        for bin in 0..span / SLICE_SECONDS {
            state = c.speed_mean
                + c.speed_persistence * (state - c.speed_mean)
                + innovation * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let speed_state = state.max(5.0);
            let n = detections.sample(&mut rng) as usize;
            let mut offsets: Vec<i64> = (0..n).map(|_| rng.random_range(0..SLICE_SECONDS)).collect();
            offsets.sort_unstable();
            for off in offsets {
                let kmh = speed_state * f64::exp(jitter.sample(&mut rng));
                let tt = seg.length_m / (kmh / 3.6);
                records.travel_times.push(TravelTimeRecord {
                    segment_id: seg.segment_id.clone(),
                    timestamp: SIM_START + bin * SLICE_SECONDS + off,
                    travel_time: (tt * 10.0).round() / 10.0,
                });
            }
        }
    }

    let mut rng = stratum_rng(config.seed, 2);
    let per_interval = c.volume_rate * (VOLUME_INTERVAL_SECONDS / SLICE_SECONDS) as f64;
    let shares = [(Approach::Through, 0.7), (Approach::Left, 0.15), (Approach::Right, 0.15)];
    let splits: Vec<(Approach, Poisson<f64>)> = shares
        .iter()
        .map(|&(a, w)| (a, Poisson::new(per_interval * w).expect("positive rate")))
        .collect();
    for t in (0..span).step_by(VOLUME_INTERVAL_SECONDS as usize) {
        for i in 1..=config.segments + 1 {
            for (approach, dist) in &splits {
                records.volumes.push(VolumeRecord {
                    intersection_id: intersection(i),
                    interval_start: SIM_START + t,
                    approach: *approach,
                    volume: dist.sample(&mut rng) as u32,
                });
            }
        }
    }

    if let Some(cycle) = c.cycle_seconds {
        let mut rng = stratum_rng(config.seed, 3);
        for i in 2..=config.segments + 1 {
            let offset = rng.random_range(0..cycle);
            let mut start = offset;
            while start + c.green_seconds <= span {
                records.phases.push(PhaseRecord {
                    intersection_id: intersection(i),
                    phase_id: "2".into(),
                    green_start: SIM_START + start,
                    green_end: SIM_START + start + c.green_seconds,
                });
                start += cycle;
            }
        }
    }

    // Two-state hourly rain process with mean spell length of three hours.
    let mut rng = stratum_rng(config.seed, 4);
    let leave_rain = 1.0 / 3.0;
    let enter_rain = leave_rain * c.rain_share / (1.0 - c.rain_share);
    let amount = Exp::new(10.0).expect("positive rate");
    let mut raining = rng.random::<f64>() < c.rain_share;
    for h in 0..span / HOUR {
        let flip = if raining { leave_rain } else { enter_rain };
        if rng.random::<f64>() < flip {
            raining = !raining;
        }
        let precipitation = if raining {
            (f64::round((amount.sample(&mut rng) + 0.01) * 100.0)) / 100.0
        } else {
            0.0
        };
        records.weather.push(WeatherRecord {
            station_id: "MCO".into(),
            hour_start: SIM_START + h * HOUR,
            precipitation,
            visibility: if raining { rng.random_range(2.0..8.0_f64).round() } else { 10.0 },
            rainy: raining,
        });
    }
    records
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intercept giving `target` expected events over the linear predictors.
fn calibrate_intercept(eta: &[f64], target: f64) -> f64 {
    let expected = |a: f64| eta.iter().map(|e| sigmoid(a + e)).sum::<f64>();
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sensor records plus crashes drawn by Bernoulli thinning of
/// `sigmoid(alpha + beta . x)` at every 10-minute grid window where the
/// features are observable. `alpha` is set so the expected crash count is
/// `n_strata`.
pub fn simulate_corpus(config: &SimConfig) -> Result<SimResult> {
    let mut config = config.clone();
    config.mode = SimMode::Corpus;
    config.validate()?;
    let mut records = sensor_records(&config);
    let corpus = RawCorpus::new(records.clone())?;
    let slice_config = SliceConfig::default();

    let mut windows = Vec::new();
    for seg in corpus.segments() {
        let span = config.corpus.weeks as i64 * WEEK;
        for t in (CRASH_GRID_SECONDS..span).step_by(CRASH_GRID_SECONDS as usize) {
            let anchor = SIM_START + t;
            if let Some(x) = window_features(&corpus, &seg.segment_id, anchor, &config.features, &slice_config)? {
                let eta: f64 = x.iter().zip(&config.true_beta).map(|(v, b)| v * b).sum();
                windows.push((seg.segment_id.clone(), anchor, eta));
            }
        }
    }
    if (windows.len() as f64) < 2.0 * config.n_strata as f64 {
        return Err(Error::InvalidConfig(format!(
            "{} candidate windows cannot carry {} expected crashes",
            windows.len(),
            config.n_strata
        )));
    }
    let eta: Vec<f64> = windows.iter().map(|w| w.2).collect();
    let alpha = calibrate_intercept(&eta, config.n_strata as f64);

    let mut rng = stratum_rng(config.seed, 5);
    for (segment_id, anchor, eta) in &windows {
        if rng.random::<f64>() < sigmoid(alpha + eta) {
            records.crashes.push(CrashEvent {
                crash_id: format!("C{:04}", records.crashes.len() + 1),
                segment_id: segment_id.clone(),
                timestamp: *anchor,
            });
        }
    }

    let mut truth = config.truth();
    truth
        .set("weeks", config.corpus.weeks)
        .set("detection_rate", config.corpus.detection_rate)
        .set("intercept", alpha)
        .set("candidate_windows", windows.len())
        .set("crashes", records.crashes.len());
    Ok(SimResult {
        output: SimOutput::Corpus(records),
        true_beta: config.true_beta.clone(),
        truth,
    })
}
