//! Matched case-control construction.
//!
//! Each crash becomes a stratum holding the crash window plus `m` non-crash
//! windows on the same segment at the same minute of day and day of week on
//! other weeks. Strata are the unit of every model fit.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig};
use crate::ingest::{attach_weather, slice_aggregates, CrashEvent, RawCorpus, SliceConfig, LEAD_SECONDS, SLICE_COUNT};
use crate::kv::KeyValues;
use crate::models::ModelKind;
use crate::time::{Timestamp, MINUTE, WEEK};

/// Windows closer than this to any crash on the same segment never serve as controls.
pub const CONTAMINATION_GUARD_SECONDS: i64 = 20 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchKey {
    pub segment_id: String,
    pub minute_of_day: u32,
    /// 0 = Monday
    pub day_of_week: u32,
}

impl MatchKey {
    pub fn of(segment_id: &str, anchor: Timestamp) -> MatchKey {
        MatchKey {
            segment_id: segment_id.to_string(),
            minute_of_day: anchor.minute_of_day(),
            day_of_week: anchor.day_of_week(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceField {
    AvgSpeed,
    CvSpeed,
    UpVol,
    DownVol,
    GreenRatio,
}

impl SliceField {
    const ALL: [(SliceField, &'static str); 5] = [
        (SliceField::AvgSpeed, "avg_speed"),
        (SliceField::CvSpeed, "cv_speed"),
        (SliceField::UpVol, "up_vol"),
        (SliceField::DownVol, "down_vol"),
        (SliceField::GreenRatio, "green_ratio"),
    ];

    fn name(self) -> &'static str {
        SliceField::ALL.iter().find(|(f, _)| *f == self).map(|(_, n)| *n).unwrap()
    }
}

/// One model covariate. Slice features are named `<field>_s<slice>`,
/// e.g. `avg_speed_s2`; weather features are per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Slice { field: SliceField, slice: u8 },
    Rainy,
    Visibility,
    Precipitation,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Slice { field, slice } => write!(f, "{}_s{}", field.name(), slice),
            Feature::Rainy => f.write_str("rainy"),
            Feature::Visibility => f.write_str("visibility"),
            Feature::Precipitation => f.write_str("precipitation"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Feature> {
        let s = s.trim();
        match s {
            "rainy" => return Ok(Feature::Rainy),
            "visibility" => return Ok(Feature::Visibility),
            "precipitation" => return Ok(Feature::Precipitation),
            _ => {}
        }
        let unknown = || Error::UnknownFeature(s.to_string());
        let (base, slice) = s.rsplit_once("_s").ok_or_else(unknown)?;
        let slice: u8 = slice.parse().map_err(|_| unknown())?;
        if !(1..=SLICE_COUNT as u8).contains(&slice) {
            return Err(unknown());
        }
        let field = SliceField::ALL
            .iter()
            .find(|(_, n)| *n == base)
            .map(|(f, _)| *f)
            .ok_or_else(unknown)?;
        Ok(Feature::Slice { field, slice })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec(pub Vec<Feature>);

impl FeatureSpec {
    /// Comma-separated feature names.
    pub fn parse(list: &str) -> Result<FeatureSpec> {
        let features = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if features.is_empty() {
            return Err(Error::InvalidConfig("empty feature list".into()));
        }
        Ok(FeatureSpec(features))
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(ToString::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for FeatureSpec {
    /// Average speed and upstream volume 5-10 minutes before the anchor, plus rain.
    fn default() -> Self {
        FeatureSpec(vec![
            Feature::Slice {
                field: SliceField::AvgSpeed,
                slice: 2,
            },
            Feature::Slice {
                field: SliceField::UpVol,
                slice: 2,
            },
            Feature::Rainy,
        ])
    }
}

/// Feature vector of one window, `None` if any selected feature is missing or
/// the window lacks data coverage.
pub fn window_features(
    corpus: &RawCorpus,
    segment_id: &str,
    anchor: Timestamp,
    features: &FeatureSpec,
    config: &SliceConfig,
) -> Result<Option<Vec<f64>>> {
    let needs_slices = features.0.iter().any(|f| matches!(f, Feature::Slice { .. }));
    let needs_weather = features.0.iter().any(|f| !matches!(f, Feature::Slice { .. }));
    let slices = if needs_slices {
        match slice_aggregates(corpus, segment_id, anchor, config) {
            Ok(s) => Some(s),
            Err(Error::InsufficientCoverage { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let weather = if needs_weather {
        match attach_weather(corpus, anchor) {
            Ok(w) => Some(w),
            Err(Error::NoWeatherCoverage(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let values = features.0.iter().map(|f| match *f {
        Feature::Slice { field, slice } => {
            let s = &slices.as_ref().expect("slices computed")[usize::from(slice) - 1];
            match field {
                SliceField::AvgSpeed => s.avg_speed,
                SliceField::CvSpeed => s.cv_speed,
                SliceField::UpVol => s.up_vol,
                SliceField::DownVol => s.down_vol,
                SliceField::GreenRatio => s.green_ratio,
            }
        }
        Feature::Rainy => weather.map(|w| if w.rainy { 1.0 } else { 0.0 }),
        Feature::Visibility => weather.map(|w| w.visibility),
        Feature::Precipitation => weather.map(|w| w.precipitation),
    });
    Ok(values.collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub stratum_id: usize,
    pub is_crash: bool,
    pub anchor: Timestamp,
    pub segment_id: String,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub stratum_id: usize,
    pub key: MatchKey,
    pub case: Observation,
    pub controls: Vec<Observation>,
}

impl Stratum {
    /// Case first, then controls.
    pub fn members(&self) -> impl Iterator<Item = &Observation> {
        std::iter::once(&self.case).chain(self.controls.iter())
    }
}

/// N strata of one case and exactly `m` controls each.
///
/// Feature rows are also kept packed, stratum-major with the case first, for
/// the likelihood kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDataset {
    strata: Vec<Stratum>,
    m: usize,
    feature_names: Vec<String>,
    packed: Vec<f64>,
}

impl MatchedDataset {
    pub fn new(feature_names: Vec<String>, strata: Vec<Stratum>) -> Result<MatchedDataset> {
        let bad = |msg: String| Err(Error::InvalidDataset(msg));
        let Some(first) = strata.first() else {
            return bad("no strata".into());
        };
        let m = first.controls.len();
        let k = feature_names.len();
        if m == 0 {
            return bad("strata need at least one control".into());
        }
        if k == 0 {
            return bad("no features".into());
        }
        let mut packed = Vec::with_capacity(strata.len() * (m + 1) * k);
        for s in &strata {
            if s.controls.len() != m {
                return bad(format!(
                    "stratum {} has {} controls, expected {m}",
                    s.stratum_id,
                    s.controls.len()
                ));
            }
            if !s.case.is_crash || s.controls.iter().any(|c| c.is_crash) {
                return bad(format!("stratum {} must hold exactly one crash", s.stratum_id));
            }
            let mut anchors = Vec::with_capacity(m + 1);
            for obs in s.members() {
                if obs.x.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        found: obs.x.len(),
                    });
                }
                if obs.x.iter().any(|v| !v.is_finite()) {
                    return bad(format!("stratum {} has a non-finite feature", s.stratum_id));
                }
                if obs.stratum_id != s.stratum_id {
                    return bad(format!("observation filed under wrong stratum {}", s.stratum_id));
                }
                if MatchKey::of(&obs.segment_id, obs.anchor) != s.key {
                    return bad(format!("stratum {} mixes match keys", s.stratum_id));
                }
                anchors.push(obs.anchor);
                packed.extend_from_slice(&obs.x);
            }
            anchors.sort_unstable();
            if anchors.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("stratum {} repeats an anchor", s.stratum_id));
            }
        }
        Ok(MatchedDataset {
            strata,
            m,
            feature_names,
            packed,
        })
    }

    /// Strata from bare feature rows (case first), with columns `x0, x1, ...`.
    /// Strata sit on alternating segments `S0`/`S1` with weekly-spaced anchors.
    pub fn from_rows(strata: &[Vec<Vec<f64>>]) -> Result<MatchedDataset> {
        let k = strata.first().and_then(|s| s.first()).map_or(0, Vec::len);
        Self::from_named_rows((0..k).map(|j| format!("x{j}")).collect(), strata)
    }

    pub fn from_named_rows(feature_names: Vec<String>, strata: &[Vec<Vec<f64>>]) -> Result<MatchedDataset> {
        let base = Timestamp(1_488_758_400); // Monday 2017-03-06
        let built = strata
            .iter()
            .enumerate()
            .map(|(i, members)| {
                let segment_id = format!("S{}", i % 2);
                let anchor0 = base + (i as i64 % 1440) * MINUTE;
                let obs = |j: usize, x: &Vec<f64>| Observation {
                    stratum_id: i + 1,
                    is_crash: j == 0,
                    anchor: anchor0 + j as i64 * WEEK,
                    segment_id: segment_id.clone(),
                    x: x.clone(),
                };
                let (case, controls) = members
                    .split_first()
                    .ok_or_else(|| Error::InvalidDataset(format!("stratum {} is empty", i + 1)))?;
                Ok(Stratum {
                    stratum_id: i + 1,
                    key: MatchKey::of(&segment_id, anchor0),
                    case: obs(0, case),
                    controls: controls.iter().enumerate().map(|(j, x)| obs(j + 1, x)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MatchedDataset::new(feature_names, built)
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    /// Controls per case.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn total_observations(&self) -> usize {
        self.strata.len() * (self.m + 1)
    }

    /// Packed `(m + 1) x k` feature rows of stratum `i`, case first.
    pub fn stratum_rows(&self, i: usize) -> &[f64] {
        let width = (self.m + 1) * self.k();
        &self.packed[i * width..(i + 1) * width]
    }

    /// All rows, stratum-major.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.packed.chunks_exact(self.k())
    }

    /// Crash flag of packed row `r`.
    pub fn row_is_case(&self, r: usize) -> bool {
        r.is_multiple_of(self.m + 1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_error(path, e))?;
        let mut header = vec!["stratum_id", "is_crash", "anchor", "segment_id"];
        header.extend(self.feature_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for s in &self.strata {
            for obs in s.members() {
                let mut rec = vec![
                    obs.stratum_id.to_string(),
                    u8::from(obs.is_crash).to_string(),
                    obs.anchor.to_string(),
                    obs.segment_id.clone(),
                ];
                rec.extend(obs.x.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the flat CSV; strata appear in file order, the crash row may sit
    /// anywhere within its stratum.
    pub fn read_csv(path: &Path) -> Result<MatchedDataset> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
        let headers = reader.headers()?.clone();
        const FIXED: [&str; 4] = ["stratum_id", "is_crash", "anchor", "segment_id"];
        for (i, name) in FIXED.iter().enumerate() {
            if headers.get(i).map(str::trim) != Some(*name) {
                return Err(Error::MissingColumn {
                    source_name: "dataset".into(),
                    name: name.to_string(),
                });
            }
        }
        let feature_names: Vec<String> = headers.iter().skip(FIXED.len()).map(|h| h.trim().to_string()).collect();

        let mut order: Vec<usize> = Vec::new();
        let mut groups: HashMap<usize, Vec<Observation>> = HashMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let stratum_id: usize = field(0)
                .parse()
                .map_err(|_| Error::bad_row("dataset", line, "stratum_id"))?;
            let is_crash = match field(1) {
                "1" => true,
                "0" => false,
                _ => return Err(Error::bad_row("dataset", line, "is_crash")),
            };
            let anchor = field(2)
                .parse()
                .map_err(|_| Error::bad_row("dataset", line, "anchor"))?;
            let x = (0..feature_names.len())
                .map(|j| {
                    field(FIXED.len() + j)
                        .parse::<f64>()
                        .map_err(|_| Error::bad_row("dataset", line, feature_names[j].clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let obs = Observation {
                stratum_id,
                is_crash,
                anchor,
                segment_id: field(3).to_string(),
                x,
            };
            groups
                .entry(stratum_id)
                .or_insert_with(|| {
                    order.push(stratum_id);
                    Vec::new()
                })
                .push(obs);
        }

        let mut strata = Vec::with_capacity(order.len());
        for id in order {
            let members = groups.remove(&id).unwrap_or_default();
            let (cases, controls): (Vec<_>, Vec<_>) = members.into_iter().partition(|o| o.is_crash);
            let [case] = <[Observation; 1]>::try_from(cases).map_err(|_| {
                Error::InvalidDataset(format!("stratum {id} must hold exactly one crash"))
            })?;
            strata.push(Stratum {
                stratum_id: id,
                key: MatchKey::of(&case.segment_id, case.anchor),
                case,
                controls,
            });
        }
        MatchedDataset::new(feature_names, strata)
    }
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// Side-car written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub m: usize,
    pub seed: u64,
    pub features: Vec<String>,
    pub n_strata: usize,
    pub dropped_crashes: usize,
    /// `corpus` or `simulated`
    pub origin: String,
}

impl DatasetManifest {
    pub fn for_dataset(ds: &MatchedDataset, seed: u64, dropped_crashes: usize, origin: &str) -> Self {
        DatasetManifest {
            m: ds.m(),
            seed,
            features: ds.feature_names().to_vec(),
            n_strata: ds.n_strata(),
            dropped_crashes,
            origin: origin.to_string(),
        }
    }

    /// `<dataset>.manifest` beside `<dataset>.csv`.
    pub fn path_for(dataset: &Path) -> PathBuf {
        dataset.with_extension("manifest")
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("m", self.m)
            .set("seed", self.seed)
            .set("features", self.features.join(","))
            .set("n_strata", self.n_strata)
            .set("dropped_crashes", self.dropped_crashes)
            .set("origin", &self.origin);
        kv
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        Ok(DatasetManifest {
            m: kv.require("m", path)?,
            seed: kv.require("seed", path)?,
            features: kv
                .get("features")
                .unwrap_or("")
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            n_strata: kv.require("n_strata", path)?,
            dropped_crashes: kv.require("dropped_crashes", path)?,
            origin: kv.get("origin").unwrap_or("").to_string(),
        })
    }
}

/// Loads a dataset CSV and checks it against its manifest.
pub fn load_dataset(path: &Path) -> Result<(MatchedDataset, DatasetManifest)> {
    let manifest_path = DatasetManifest::path_for(path);
    if !manifest_path.exists() {
        return Err(Error::Format {
            path: manifest_path,
            reason: "dataset manifest not found".into(),
        });
    }
    let manifest = DatasetManifest::read(&manifest_path)?;
    let ds = MatchedDataset::read_csv(path)?;
    if manifest.m != ds.m() || manifest.n_strata != ds.n_strata() || manifest.features != ds.feature_names() {
        return Err(Error::Format {
            path: manifest_path,
            reason: "manifest does not describe the dataset".into(),
        });
    }
    Ok((ds, manifest))
}

pub fn save_dataset(ds: &MatchedDataset, manifest: &DatasetManifest, path: &Path) -> Result<()> {
    ds.write_csv(path)?;
    manifest.write(&DatasetManifest::path_for(path))
}

/// Same-segment, same minute-of-day and weekday anchors on other weeks, inside
/// the corpus range with 20 minutes of lead, away from every crash on the
/// segment. Ascending.
pub fn candidate_anchors(corpus: &RawCorpus, crash: &CrashEvent) -> Vec<Timestamp> {
    let (start, end) = corpus.time_range();
    let crash_times = corpus.crash_times(&crash.segment_id);
    let t = crash.timestamp;
    let first = -(t - (start + LEAD_SECONDS)).div_euclid(WEEK);
    let last = (end - 1 - t).div_euclid(WEEK);
    (first..=last)
        .filter(|&k| k != 0)
        .map(|k| t + k * WEEK)
        .filter(|&a| {
            let lo = crash_times.partition_point(|&c| c < a - CONTAMINATION_GUARD_SECONDS);
            crash_times
                .get(lo)
                .is_none_or(|&c| c > a + CONTAMINATION_GUARD_SECONDS)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedCrash {
    pub crash_id: String,
    pub viable_controls: usize,
    /// False when the crash window itself lacked a selected feature.
    pub case_viable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub dataset: MatchedDataset,
    pub dropped: Vec<DroppedCrash>,
}

/// Builds 1:m strata. Controls are drawn uniformly without replacement from
/// the viable candidates using a per-crash ChaCha stream of `seed`.
pub fn build_matched_dataset(
    corpus: &RawCorpus,
    m: usize,
    features: &FeatureSpec,
    seed: u64,
    config: &SliceConfig,
) -> Result<MatchOutcome> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(Error::InvalidConfig("empty feature list".into()));
    }
    let mut strata = Vec::new();
    let mut dropped = Vec::new();
    for (ci, crash) in corpus.crashes().iter().enumerate() {
        let case_x = window_features(corpus, &crash.segment_id, crash.timestamp, features, config)?;
        let mut viable = Vec::new();
        for anchor in candidate_anchors(corpus, crash) {
            if let Some(x) = window_features(corpus, &crash.segment_id, anchor, features, config)? {
                viable.push((anchor, x));
            }
        }
        let Some(case_x) = case_x.filter(|_| viable.len() >= m) else {
            dropped.push(DroppedCrash {
                crash_id: crash.crash_id.clone(),
                viable_controls: viable.len(),
                case_viable: window_features(corpus, &crash.segment_id, crash.timestamp, features, config)?
                    .is_some(),
            });
            continue;
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        let mut picks = index::sample(&mut rng, viable.len(), m).into_vec();
        picks.sort_unstable();

        let stratum_id = strata.len() + 1;
        let observation = |anchor: Timestamp, x: Vec<f64>, is_crash: bool| Observation {
            stratum_id,
            is_crash,
            anchor,
            segment_id: crash.segment_id.clone(),
            x,
        };
        let controls = picks
            .into_iter()
            .map(|i| {
                let (a, x) = &viable[i];
                observation(*a, x.clone(), false)
            })
            .collect();
        strata.push(Stratum {
            stratum_id,
            key: MatchKey::of(&crash.segment_id, crash.timestamp),
            case: observation(crash.timestamp, case_x, true),
            controls,
        });
    }
    if strata.is_empty() {
        return Err(Error::NoViableStrata {
            dropped: dropped.len(),
        });
    }
    Ok(MatchOutcome {
        dataset: MatchedDataset::new(features.names(), strata)?,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub n_strata: usize,
    pub dropped: usize,
    pub auc: f64,
    pub dic: f64,
}

/// Fits the conditional model at each control-to-case ratio.
pub fn ratio_sweep(
    corpus: &RawCorpus,
    ratios: &[usize],
    features: &FeatureSpec,
    fit_config: &FitConfig,
    seed: u64,
    slice_config: &SliceConfig,
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        return Err(Error::InvalidConfig("no control ratios given".into()));
    }
    ratios
        .iter()
        .map(|&m| {
            let tag = |e: Error| Error::AtRatio { m, source: Box::new(e) };
            let outcome = build_matched_dataset(corpus, m, features, seed, slice_config).map_err(tag)?;
            let fitted = fit_model(&outcome.dataset, ModelKind::Conditional, fit_config).map_err(tag)?;
            Ok(SweepRow {
                m,
                n_strata: outcome.dataset.n_strata(),
                dropped: outcome.dropped.len(),
                auc: fitted.auc.auc,
                dic: fitted.dic.dic,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CorpusRecords, SegmentMeta, TravelTimeRecord, WeatherRecord};
    use crate::time::HOUR;

    fn t(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    /// Weather every hour over `weeks` weeks from Monday 2017-03-06, one
    /// detection per minute on segment S1.
    fn corpus(weeks: i64, crashes: &[(&str, &str)]) -> RawCorpus {
        let start = t("2017-03-06T00:00:00Z");
        let mut r = CorpusRecords {
            segments: vec![SegmentMeta {
                segment_id: "S1".into(),
                length_m: 500.0,
                upstream_intersection_id: "U".into(),
                downstream_intersection_id: "D".into(),
            }],
            ..Default::default()
        };
        let hours = weeks * WEEK / HOUR;
        for h in 0..hours {
            r.weather.push(WeatherRecord {
                station_id: "MCO".into(),
                hour_start: start + h * HOUR,
                precipitation: if h % 5 == 0 { 0.1 } else { 0.0 },
                visibility: 10.0,
                rainy: false,
            });
        }
        for min in (0..weeks * WEEK / 60).step_by(1) {
            r.travel_times.push(TravelTimeRecord {
                segment_id: "S1".into(),
                timestamp: start + min * 60 + 30,
                travel_time: 50.0 + (min % 17) as f64,
            });
        }
        for (i, (ts, seg)) in crashes.iter().enumerate() {
            r.crashes.push(CrashEvent {
                crash_id: format!("C{i}"),
                segment_id: seg.to_string(),
                timestamp: t(ts),
            });
        }
        RawCorpus::new(r).unwrap()
    }

    #[test]
    fn feature_names_round_trip() {
        for name in ["avg_speed_s1", "cv_speed_s4", "up_vol_s2", "down_vol_s3", "green_ratio_s1", "rainy", "visibility", "precipitation"] {
            assert_eq!(name.parse::<Feature>().unwrap().to_string(), name);
        }
        for bad in ["avg_speed_s5", "avg_speed_s0", "speed_s1", "up_vol"] {
            assert!(matches!(bad.parse::<Feature>(), Err(Error::UnknownFeature(_))), "{bad}");
        }
    }

    #[test]
    fn eight_weeks_give_seven_candidates() {
        let c = corpus(8, &[("2017-03-21T14:32:00Z", "S1")]);
        let anchors = candidate_anchors(&c, &c.crashes()[0]);
        assert_eq!(anchors.len(), 7);
        for a in &anchors {
            assert_eq!(MatchKey::of("S1", *a), MatchKey::of("S1", t("2017-03-21T14:32:00Z")));
        }
        assert!(anchors.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nearby_crash_excludes_candidate() {
        let c = corpus(8, &[("2017-03-21T14:32:00Z", "S1"), ("2017-03-28T14:40:00Z", "S1")]);
        let anchors = candidate_anchors(&c, &c.crashes()[0]);
        assert_eq!(anchors.len(), 6);
        assert!(!anchors.contains(&t("2017-03-28T14:32:00Z")));
    }

    #[test]
    fn one_week_has_no_candidates() {
        let c = corpus(1, &[("2017-03-07T14:32:00Z", "S1")]);
        assert!(candidate_anchors(&c, &c.crashes()[0]).is_empty());
    }

    #[test]
    fn builds_one_stratum_and_is_deterministic() {
        let c = corpus(4, &[("2017-03-14T14:32:00Z", "S1")]);
        let spec = FeatureSpec::parse("avg_speed_s1,rainy").unwrap();
        let a = build_matched_dataset(&c, 2, &spec, 11, &SliceConfig::default()).unwrap();
        let b = build_matched_dataset(&c, 2, &spec, 11, &SliceConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.n_strata(), 1);
        assert_eq!(a.dataset.total_observations(), 3);
        assert!(a.dropped.is_empty());
    }

    #[test]
    fn too_few_candidates_drops_everything() {
        let c = corpus(2, &[("2017-03-14T14:32:00Z", "S1")]);
        let spec = FeatureSpec::default();
        // one candidate week, no volume data: nothing is viable
        let err = build_matched_dataset(&c, 2, &spec, 1, &SliceConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoViableStrata { dropped: 1 }));
        let spec = FeatureSpec::parse("avg_speed_s1").unwrap();
        let err = build_matched_dataset(&c, 2, &spec, 1, &SliceConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoViableStrata { dropped: 1 }));
    }

    #[test]
    fn csv_round_trip_with_manifest() {
        let c = corpus(6, &[("2017-03-14T14:32:00Z", "S1"), ("2017-03-22T08:05:00Z", "S1")]);
        let spec = FeatureSpec::parse("avg_speed_s1,cv_speed_s2,precipitation").unwrap();
        let out = build_matched_dataset(&c, 3, &spec, 5, &SliceConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        let manifest = DatasetManifest::for_dataset(&out.dataset, 5, 0, "corpus");
        save_dataset(&out.dataset, &manifest, &path).unwrap();
        let (back, m2) = load_dataset(&path).unwrap();
        assert_eq!(back, out.dataset);
        assert_eq!(m2, manifest);

        std::fs::remove_file(DatasetManifest::path_for(&path)).unwrap();
        match load_dataset(&path) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with("dataset.manifest")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_mixed_keys() {
        let obs = |anchor: &str, crash: bool| Observation {
            stratum_id: 1,
            is_crash: crash,
            anchor: t(anchor),
            segment_id: "S1".into(),
            x: vec![1.0],
        };
        let stratum = Stratum {
            stratum_id: 1,
            key: MatchKey::of("S1", t("2017-03-14T14:32:00Z")),
            case: obs("2017-03-14T14:32:00Z", true),
            controls: vec![obs("2017-03-21T14:33:00Z", false)],
        };
        assert!(matches!(
            MatchedDataset::new(vec!["x".into()], vec![stratum]),
            Err(Error::InvalidDataset(_))
        ));
    }
}
