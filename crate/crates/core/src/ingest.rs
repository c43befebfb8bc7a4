//! Raw source records, CSV loading, and per-window feature aggregation.
//!
//! Six CSV sources make up a corpus: crashes, Bluetooth travel times,
//! 15-minute intersection volumes, signal phases, hourly weather, and segment
//! metadata. After [`load_corpus`] the [`RawCorpus`] is immutable and every
//! aggregation is a pure function of it.
//!
//! Traffic is summarised into four 5-minute slices before an anchor instant.
//! Slice 1 covers `[anchor - 5 min, anchor)`, slice 4 covers
//! `[anchor - 20 min, anchor - 15 min)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::StringRecord;

use crate::error::{Error, Result};
use crate::time::{Timestamp, HOUR, MINUTE};

pub const SLICE_SECONDS: i64 = 5 * MINUTE;
pub const SLICE_COUNT: usize = 4;
pub const LEAD_SECONDS: i64 = SLICE_SECONDS * SLICE_COUNT as i64;
pub const VOLUME_INTERVAL_SECONDS: i64 = 15 * MINUTE;

#[derive(Debug, Clone, PartialEq)]
pub struct CrashEvent {
    pub crash_id: String,
    pub segment_id: String,
    pub timestamp: Timestamp,
}

/// One Bluetooth re-identification; `timestamp` is the detection completion time.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeRecord {
    pub segment_id: String,
    pub timestamp: Timestamp,
    pub travel_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Through,
    Left,
    Right,
    All,
}

impl FromStr for Approach {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "through" => Ok(Approach::Through),
            "left" => Ok(Approach::Left),
            "right" => Ok(Approach::Right),
            "all" => Ok(Approach::All),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::Through => "through",
            Approach::Left => "left",
            Approach::Right => "right",
            Approach::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub intersection_id: String,
    pub interval_start: Timestamp,
    pub approach: Approach,
    pub volume: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub intersection_id: String,
    pub phase_id: String,
    pub green_start: Timestamp,
    pub green_end: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub station_id: String,
    pub hour_start: Timestamp,
    pub precipitation: f64,
    pub visibility: f64,
    pub rainy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeta {
    pub segment_id: String,
    pub length_m: f64,
    pub upstream_intersection_id: String,
    pub downstream_intersection_id: String,
}

/// Traffic summary of one 5-minute slice. Missing values stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceAggregate {
    /// 1 = the 5 minutes immediately before the anchor.
    pub slice_index: u8,
    /// km/h
    pub avg_speed: Option<f64>,
    pub cv_speed: Option<f64>,
    /// Vehicles per 5 minutes at the upstream intersection.
    pub up_vol: Option<f64>,
    pub down_vol: Option<f64>,
    pub green_ratio: Option<f64>,
    pub vehicle_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherFeatures {
    pub rainy: bool,
    pub visibility: f64,
    pub precipitation: f64,
}

/// How a 15-minute volume count is spread over 5-minute slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolumeAllocation {
    /// Uniform arrivals: each interval contributes `count * overlap / 900 s`.
    /// A slice lying inside one interval receives exactly a third of it.
    #[default]
    Uniform,
    /// The interval containing the slice start, divided by three.
    SliceStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    /// Minimum vehicles for `cv_speed`.
    pub min_speed_sample: usize,
    pub volume_allocation: VolumeAllocation,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            min_speed_sample: 2,
            volume_allocation: VolumeAllocation::Uniform,
        }
    }
}

/// Unvalidated record collections, as parsed or generated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusRecords {
    pub crashes: Vec<CrashEvent>,
    pub travel_times: Vec<TravelTimeRecord>,
    pub volumes: Vec<VolumeRecord>,
    pub phases: Vec<PhaseRecord>,
    pub weather: Vec<WeatherRecord>,
    pub segments: Vec<SegmentMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceCounts {
    pub crashes: usize,
    pub bluetooth: usize,
    pub volumes: usize,
    pub phases: usize,
    pub weather: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, Default)]
struct IntersectionVolumes {
    all: Option<u32>,
    directional: Option<u32>,
}

impl IntersectionVolumes {
    fn total(&self) -> Option<u32> {
        self.all.or(self.directional)
    }
}

/// Validated, indexed corpus.
#[derive(Debug, Clone)]
pub struct RawCorpus {
    records: CorpusRecords,
    range: (Timestamp, Timestamp),
    segment_index: HashMap<String, usize>,
    speeds: HashMap<String, Vec<(Timestamp, f64)>>,
    volume_index: HashMap<String, BTreeMap<Timestamp, IntersectionVolumes>>,
    green_index: HashMap<String, Vec<(Timestamp, Timestamp)>>,
    weather_index: BTreeMap<Timestamp, usize>,
    crashes_by_segment: HashMap<String, Vec<Timestamp>>,
}

impl RawCorpus {
    /// Checks cross-source references and indexes the records. Row order of
    /// every collection is preserved.
    pub fn new(records: CorpusRecords) -> Result<RawCorpus> {
        let mut segment_index = HashMap::new();
        let mut intersections = HashSet::new();
        for (i, s) in records.segments.iter().enumerate() {
            if s.segment_id.is_empty() {
                return Err(Error::InvalidDataset("empty segment_id".into()));
            }
            if !(s.length_m > 0.0 && s.length_m.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "segment `{}` has non-positive length",
                    s.segment_id
                )));
            }
            if segment_index.insert(s.segment_id.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate segment `{}`",
                    s.segment_id
                )));
            }
            intersections.insert(s.upstream_intersection_id.as_str());
            intersections.insert(s.downstream_intersection_id.as_str());
        }

        let dangling = |kind: &str, id: &str| Error::DanglingReference {
            kind: kind.to_string(),
            id: id.to_string(),
        };

        let mut crash_ids = HashSet::new();
        let mut crashes_by_segment: HashMap<String, Vec<Timestamp>> = HashMap::new();
        for c in &records.crashes {
            if !segment_index.contains_key(&c.segment_id) {
                return Err(dangling("segment", &c.segment_id));
            }
            if !crash_ids.insert(c.crash_id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate crash_id `{}`", c.crash_id)));
            }
            crashes_by_segment
                .entry(c.segment_id.clone())
                .or_default()
                .push(c.timestamp);
        }
        for times in crashes_by_segment.values_mut() {
            times.sort_unstable();
        }

        let mut speeds: HashMap<String, Vec<(Timestamp, f64)>> = HashMap::new();
        for r in &records.travel_times {
            let Some(&si) = segment_index.get(&r.segment_id) else {
                return Err(dangling("segment", &r.segment_id));
            };
            if !(r.travel_time > 0.0 && r.travel_time.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "non-positive travel time on segment `{}`",
                    r.segment_id
                )));
            }
            let kmh = records.segments[si].length_m / r.travel_time * 3.6;
            speeds
                .entry(r.segment_id.clone())
                .or_default()
                .push((r.timestamp, kmh));
        }
        for v in speeds.values_mut() {
            // stable: equal timestamps keep file order
            v.sort_by_key(|&(t, _)| t);
        }

        let mut volume_index: HashMap<String, BTreeMap<Timestamp, IntersectionVolumes>> =
            HashMap::new();
        for v in &records.volumes {
            if !intersections.contains(v.intersection_id.as_str()) {
                return Err(dangling("intersection", &v.intersection_id));
            }
            if !v.interval_start.is_aligned(VOLUME_INTERVAL_SECONDS) {
                return Err(Error::InvalidDataset(format!(
                    "volume interval {} is not on a 15-minute boundary",
                    v.interval_start
                )));
            }
            let slot = volume_index
                .entry(v.intersection_id.clone())
                .or_default()
                .entry(v.interval_start)
                .or_default();
            match v.approach {
                Approach::All => slot.all = Some(slot.all.unwrap_or(0) + v.volume),
                _ => slot.directional = Some(slot.directional.unwrap_or(0) + v.volume),
            }
        }

        let mut raw_green: HashMap<String, Vec<(Timestamp, Timestamp)>> = HashMap::new();
        for p in &records.phases {
            if !intersections.contains(p.intersection_id.as_str()) {
                return Err(dangling("intersection", &p.intersection_id));
            }
            if p.green_end <= p.green_start {
                return Err(Error::InvalidDataset(format!(
                    "phase `{}` at `{}` ends before it starts",
                    p.phase_id, p.intersection_id
                )));
            }
            raw_green
                .entry(p.intersection_id.clone())
                .or_default()
                .push((p.green_start, p.green_end));
        }
        let green_index = raw_green
            .into_iter()
            .map(|(k, v)| (k, merge_intervals(v)))
            .collect();

        let mut weather_index = BTreeMap::new();
        let mut stations = HashSet::new();
        for (i, w) in records.weather.iter().enumerate() {
            stations.insert(w.station_id.as_str());
            if !w.hour_start.is_aligned(HOUR) {
                return Err(Error::InvalidDataset(format!(
                    "weather hour {} is not on an hour boundary",
                    w.hour_start
                )));
            }
            if weather_index.insert(w.hour_start, i).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate weather hour {}",
                    w.hour_start
                )));
            }
        }
        if stations.len() > 1 {
            return Err(Error::InvalidConfig(
                "weather records come from several stations; select one".into(),
            ));
        }

        let range = time_range(&records);
        Ok(RawCorpus {
            records,
            range,
            segment_index,
            speeds,
            volume_index,
            green_index,
            weather_index,
            crashes_by_segment,
        })
    }

    pub fn records(&self) -> &CorpusRecords {
        &self.records
    }

    pub fn crashes(&self) -> &[CrashEvent] {
        &self.records.crashes
    }

    pub fn segments(&self) -> &[SegmentMeta] {
        &self.records.segments
    }

    pub fn segment(&self, segment_id: &str) -> Option<&SegmentMeta> {
        self.segment_index
            .get(segment_id)
            .map(|&i| &self.records.segments[i])
    }

    /// `[start, end)` spanned by all records.
    pub fn time_range(&self) -> (Timestamp, Timestamp) {
        self.range
    }

    /// Crash instants on a segment, ascending.
    pub fn crash_times(&self, segment_id: &str) -> &[Timestamp] {
        self.crashes_by_segment
            .get(segment_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn counts(&self) -> SourceCounts {
        let r = &self.records;
        SourceCounts {
            crashes: r.crashes.len(),
            bluetooth: r.travel_times.len(),
            volumes: r.volumes.len(),
            phases: r.phases.len(),
            weather: r.weather.len(),
            segments: r.segments.len(),
        }
    }

    fn volume_over(
        &self,
        intersection: &str,
        start: Timestamp,
        end: Timestamp,
        allocation: VolumeAllocation,
    ) -> Option<f64> {
        let table = self.volume_index.get(intersection)?;
        let third = |t: Timestamp| {
            table
                .get(&t.floor_to(VOLUME_INTERVAL_SECONDS))
                .and_then(IntersectionVolumes::total)
        };
        match allocation {
            VolumeAllocation::SliceStart => third(start).map(|v| f64::from(v) / 3.0),
            VolumeAllocation::Uniform => {
                let mut total = 0.0;
                let mut bucket = start.floor_to(VOLUME_INTERVAL_SECONDS);
                while bucket < end {
                    let next = bucket + VOLUME_INTERVAL_SECONDS;
                    let overlap = (next.min(end) - bucket.max(start)) as f64;
                    let count = table.get(&bucket).and_then(IntersectionVolumes::total)?;
                    total += f64::from(count) * overlap / VOLUME_INTERVAL_SECONDS as f64;
                    bucket = next;
                }
                Some(total)
            }
        }
    }

    fn green_ratio(&self, intersection: &str, start: Timestamp, end: Timestamp) -> Option<f64> {
        let greens = self.green_index.get(intersection)?;
        let first = greens.partition_point(|&(_, e)| e <= start);
        let green: i64 = greens[first..]
            .iter()
            .take_while(|&&(s, _)| s < end)
            .map(|&(s, e)| e.min(end) - s.max(start))
            .sum();
        Some(green as f64 / (end - start) as f64)
    }
}

fn merge_intervals(mut v: Vec<(Timestamp, Timestamp)>) -> Vec<(Timestamp, Timestamp)> {
    v.sort_unstable();
    let mut out: Vec<(Timestamp, Timestamp)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn time_range(r: &CorpusRecords) -> (Timestamp, Timestamp) {
    let spans = r
        .crashes
        .iter()
        .map(|c| (c.timestamp, c.timestamp + 1))
        .chain(r.travel_times.iter().map(|t| (t.timestamp, t.timestamp + 1)))
        .chain(
            r.volumes
                .iter()
                .map(|v| (v.interval_start, v.interval_start + VOLUME_INTERVAL_SECONDS)),
        )
        .chain(r.phases.iter().map(|p| (p.green_start, p.green_end)))
        .chain(r.weather.iter().map(|w| (w.hour_start, w.hour_start + HOUR)));
    spans
        .fold(None, |acc: Option<(Timestamp, Timestamp)>, (s, e)| match acc {
            None => Some((s, e)),
            Some((a, b)) => Some((a.min(s), b.max(e))),
        })
        .unwrap_or_default()
}

/// Aggregates the four 5-minute slices preceding `anchor` on a segment.
pub fn slice_aggregates(
    corpus: &RawCorpus,
    segment_id: &str,
    anchor: Timestamp,
    config: &SliceConfig,
) -> Result<[SliceAggregate; SLICE_COUNT]> {
    let segment = corpus
        .segment(segment_id)
        .ok_or_else(|| Error::UnknownSegment(segment_id.to_string()))?;
    if anchor - LEAD_SECONDS < corpus.range.0 {
        return Err(Error::InsufficientCoverage {
            segment_id: segment_id.to_string(),
            anchor,
        });
    }
    let detections = corpus
        .speeds
        .get(segment_id)
        .map(Vec::as_slice)
        .unwrap_or(&[]);

    Ok(std::array::from_fn(|i| {
        let end = anchor - SLICE_SECONDS * i as i64;
        let start = end - SLICE_SECONDS;
        let lo = detections.partition_point(|&(t, _)| t < start);
        let hi = detections.partition_point(|&(t, _)| t < end);
        let speeds: Vec<f64> = detections[lo..hi].iter().map(|&(_, v)| v).collect();
        let (avg_speed, cv_speed) = speed_moments(&speeds, config.min_speed_sample);
        SliceAggregate {
            slice_index: i as u8 + 1,
            avg_speed,
            cv_speed,
            up_vol: corpus.volume_over(
                &segment.upstream_intersection_id,
                start,
                end,
                config.volume_allocation,
            ),
            down_vol: corpus.volume_over(
                &segment.downstream_intersection_id,
                start,
                end,
                config.volume_allocation,
            ),
            green_ratio: corpus.green_ratio(&segment.downstream_intersection_id, start, end),
            vehicle_count: speeds.len(),
        }
    }))
}

fn speed_moments(speeds: &[f64], min_sample: usize) -> (Option<f64>, Option<f64>) {
    if speeds.is_empty() {
        return (None, None);
    }
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    if speeds.len() < min_sample.max(2) {
        return (Some(mean), None);
    }
    let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt() / mean))
}

/// Weather for the hour covering `anchor`. Rain is flagged when either the
/// recorded indicator is set or any precipitation fell.
pub fn attach_weather(corpus: &RawCorpus, anchor: Timestamp) -> Result<WeatherFeatures> {
    let hour = anchor.floor_to(HOUR);
    let &i = corpus
        .weather_index
        .get(&hour)
        .ok_or(Error::NoWeatherCoverage(anchor))?;
    let w = &corpus.records.weather[i];
    Ok(WeatherFeatures {
        rainy: w.rainy || w.precipitation > 0.0,
        visibility: w.visibility,
        precipitation: w.precipitation,
    })
}

/// File locations of the six sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub crashes: PathBuf,
    pub bluetooth: PathBuf,
    pub volumes: PathBuf,
    pub phases: PathBuf,
    pub weather: PathBuf,
    pub segments: PathBuf,
}

impl CorpusPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> CorpusPaths {
        let dir = dir.as_ref();
        CorpusPaths {
            crashes: dir.join("crashes.csv"),
            bluetooth: dir.join("bluetooth.csv"),
            volumes: dir.join("volumes.csv"),
            phases: dir.join("phases.csv"),
            weather: dir.join("weather.csv"),
            segments: dir.join("segments.csv"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep only weather rows from this station.
    pub weather_station: Option<String>,
}

const CRASH_COLUMNS: [&str; 3] = ["crash_id", "segment_id", "timestamp"];
const BLUETOOTH_COLUMNS: [&str; 3] = ["segment_id", "timestamp", "travel_time_s"];
const VOLUME_COLUMNS: [&str; 4] = ["intersection_id", "interval_start", "approach", "volume"];
const PHASE_COLUMNS: [&str; 4] = ["intersection_id", "phase_id", "green_start", "green_end"];
const WEATHER_COLUMNS: [&str; 5] = ["station_id", "hour_start", "precip_in", "visibility_mi", "rainy"];
const SEGMENT_COLUMNS: [&str; 4] = [
    "segment_id",
    "length_m",
    "upstream_intersection_id",
    "downstream_intersection_id",
];

struct Rows<'a> {
    source: &'a str,
    line: u64,
    record: StringRecord,
    columns: Vec<usize>,
}

impl Rows<'_> {
    fn text(&self, col: usize) -> &str {
        self.record.get(self.columns[col]).unwrap_or("").trim()
    }

    fn id(&self, col: usize, name: &str) -> Result<String> {
        let s = self.text(col);
        if s.is_empty() {
            Err(Error::bad_row(self.source, self.line, name))
        } else {
            Ok(s.to_string())
        }
    }

    fn timestamp(&self, col: usize, name: &str) -> Result<Timestamp> {
        self.text(col)
            .parse()
            .map_err(|_| Error::bad_row(self.source, self.line, name))
    }

    fn number(&self, col: usize, name: &str) -> Result<f64> {
        self.text(col)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::bad_row(self.source, self.line, name))
    }

    fn non_negative(&self, col: usize, name: &str) -> Result<f64> {
        let v = self.number(col, name)?;
        if v < 0.0 {
            return Err(Error::bad_row(self.source, self.line, name));
        }
        Ok(v)
    }
}

fn read_rows<T>(
    source: &str,
    path: &Path,
    columns: &[&str],
    mut parse: impl FnMut(&Rows<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let indices = columns
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn {
                    source_name: source.to_string(),
                    name: name.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let rows = Rows {
            source,
            line,
            record,
            columns: indices.clone(),
        };
        out.push(parse(&rows)?);
    }
    Ok(out)
}

/// Parses and validates all six sources.
pub fn load_corpus(paths: &CorpusPaths, options: &LoadOptions) -> Result<RawCorpus> {
    let segments = read_rows("segments", &paths.segments, &SEGMENT_COLUMNS, |r| {
        let length_m = r.number(1, "length_m")?;
        if length_m <= 0.0 {
            return Err(Error::bad_row(r.source, r.line, "length_m"));
        }
        Ok(SegmentMeta {
            segment_id: r.id(0, "segment_id")?,
            length_m,
            upstream_intersection_id: r.id(2, "upstream_intersection_id")?,
            downstream_intersection_id: r.id(3, "downstream_intersection_id")?,
        })
    })?;

    let mut seen = HashSet::new();
    let crashes = read_rows("crashes", &paths.crashes, &CRASH_COLUMNS, |r| {
        let crash_id = r.id(0, "crash_id")?;
        if !seen.insert(crash_id.clone()) {
            return Err(Error::bad_row(r.source, r.line, "duplicate crash_id"));
        }
        Ok(CrashEvent {
            crash_id,
            segment_id: r.id(1, "segment_id")?,
            timestamp: r.timestamp(2, "timestamp")?,
        })
    })?;

    let travel_times = read_rows("bluetooth", &paths.bluetooth, &BLUETOOTH_COLUMNS, |r| {
        let travel_time = r.number(2, "travel_time_s")?;
        if travel_time <= 0.0 {
            return Err(Error::bad_row(r.source, r.line, "travel_time_s"));
        }
        Ok(TravelTimeRecord {
            segment_id: r.id(0, "segment_id")?,
            timestamp: r.timestamp(1, "timestamp")?,
            travel_time,
        })
    })?;

    let volumes = read_rows("volumes", &paths.volumes, &VOLUME_COLUMNS, |r| {
        let interval_start = r.timestamp(1, "interval_start")?;
        if !interval_start.is_aligned(VOLUME_INTERVAL_SECONDS) {
            return Err(Error::bad_row(r.source, r.line, "interval_start"));
        }
        let approach = r
            .text(2)
            .parse()
            .map_err(|_| Error::bad_row(r.source, r.line, "approach"))?;
        let volume = r
            .text(3)
            .parse::<u32>()
            .map_err(|_| Error::bad_row(r.source, r.line, "volume"))?;
        Ok(VolumeRecord {
            intersection_id: r.id(0, "intersection_id")?,
            interval_start,
            approach,
            volume,
        })
    })?;

    let phases = read_rows("phases", &paths.phases, &PHASE_COLUMNS, |r| {
        let green_start = r.timestamp(2, "green_start")?;
        let green_end = r.timestamp(3, "green_end")?;
        if green_end <= green_start {
            return Err(Error::bad_row(r.source, r.line, "green_end"));
        }
        Ok(PhaseRecord {
            intersection_id: r.id(0, "intersection_id")?,
            phase_id: r.id(1, "phase_id")?,
            green_start,
            green_end,
        })
    })?;

    let mut weather = read_rows("weather", &paths.weather, &WEATHER_COLUMNS, |r| {
        let hour_start = r.timestamp(1, "hour_start")?;
        if !hour_start.is_aligned(HOUR) {
            return Err(Error::bad_row(r.source, r.line, "hour_start"));
        }
        let rainy = match r.text(4) {
            "0" => false,
            "1" => true,
            _ => return Err(Error::bad_row(r.source, r.line, "rainy")),
        };
        Ok(WeatherRecord {
            station_id: r.id(0, "station_id")?,
            hour_start,
            precipitation: r.non_negative(2, "precip_in")?,
            visibility: r.non_negative(3, "visibility_mi")?,
            rainy,
        })
    })?;
    if let Some(station) = &options.weather_station {
        weather.retain(|w| &w.station_id == station);
    }

    RawCorpus::new(CorpusRecords {
        crashes,
        travel_times,
        volumes,
        phases,
        weather,
        segments,
    })
}

/// Writes the six sources under `dir` using the conventional file names.
pub fn write_corpus(records: &CorpusRecords, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = CorpusPaths::in_dir(dir);

    fn write<T>(
        path: &Path,
        header: &[&str],
        rows: &[T],
        fields: impl Fn(&T) -> Vec<String>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            },
        })?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(fields(row))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    write(&paths.crashes, &CRASH_COLUMNS, &records.crashes, |c| {
        vec![c.crash_id.clone(), c.segment_id.clone(), c.timestamp.to_string()]
    })?;
    write(&paths.bluetooth, &BLUETOOTH_COLUMNS, &records.travel_times, |t| {
        vec![t.segment_id.clone(), t.timestamp.to_string(), t.travel_time.to_string()]
    })?;
    write(&paths.volumes, &VOLUME_COLUMNS, &records.volumes, |v| {
        vec![
            v.intersection_id.clone(),
            v.interval_start.to_string(),
            v.approach.to_string(),
            v.volume.to_string(),
        ]
    })?;
    write(&paths.phases, &PHASE_COLUMNS, &records.phases, |p| {
        vec![
            p.intersection_id.clone(),
            p.phase_id.clone(),
            p.green_start.to_string(),
            p.green_end.to_string(),
        ]
    })?;
    write(&paths.weather, &WEATHER_COLUMNS, &records.weather, |w| {
        vec![
            w.station_id.clone(),
            w.hour_start.to_string(),
            w.precipitation.to_string(),
            w.visibility.to_string(),
            u8::from(w.rainy).to_string(),
        ]
    })?;
    write(&paths.segments, &SEGMENT_COLUMNS, &records.segments, |s| {
        vec![
            s.segment_id.clone(),
            s.length_m.to_string(),
            s.upstream_intersection_id.clone(),
            s.downstream_intersection_id.clone(),
        ]
    })
}
