//! Meter/weather CSV ingestion, cleaning, feature assembly, windowing,
//! temporal splitting, and a deterministic synthetic-data generator.
//!
//! The on-disk schema follows the ASHRAE meter-data layout: a meter file
//! (`building_id,meter,timestamp,meter_reading`), a weather file keyed by
//! site (`site_id,timestamp,air_temperature,cloud_coverage,dew_temperature`)
//! and a metadata file mapping buildings to sites. Timestamps are hourly
//! `YYYY-MM-DD HH:MM:SS` strings; internally every row carries an epoch-hour
//! integer. Extra columns are tolerated and ignored; empty fields mean
//! missing.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::ModelConfig;
use crate::types::SequenceBatch;
use crate::{Error, Result};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const SECONDS_PER_HOUR: i64 = 3600;

/// Meter kind, matching the numeric codes used in the CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Meter {
    Electricity = 0,
    Chilledwater = 1,
    Steam = 2,
    Hotwater = 3,
}

impl Meter {
    pub const ALL: [Meter; 4] = [
        Meter::Electricity,
        Meter::Chilledwater,
        Meter::Steam,
        Meter::Hotwater,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Meter {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Meter::Electricity),
            1 => Ok(Meter::Chilledwater),
            2 => Ok(Meter::Steam),
            3 => Ok(Meter::Hotwater),
            other => Err(Error::Data(format!("unknown meter code {other}"))),
        }
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Meter::Electricity => "electricity",
            Meter::Chilledwater => "chilledwater",
            Meter::Steam => "steam",
            Meter::Hotwater => "hotwater",
        };
        write!(f, "{name}")
    }
}

/// One meter reading joined with its building's site weather.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRecord {
    pub building_id: u32,
    pub site_id: u32,
    pub meter: Meter,
    pub epoch_hour: i64,
    /// Missing readings survive to windowing, where they mask out targets.
    pub reading: Option<f64>,
    pub air_temperature: Option<f64>,
    pub cloud_coverage: Option<f64>,
    pub dew_temperature: Option<f64>,
}

/// Counted anomalies from [`load_csv`]; none of these abort the load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    /// Rows skipped because a field failed to parse.
    pub malformed_rows: usize,
    /// Meter rows whose (site, timestamp) had no weather row.
    pub unmatched_weather: usize,
    /// Meter rows whose building is absent from the metadata file.
    pub unknown_building: usize,
    /// Weather rows where the dew point exceeded the air temperature
    /// (flagged, values kept).
    pub dew_exceeds_air: usize,
    /// Cloud-coverage values outside [0, 9], demoted to missing.
    pub cloud_out_of_range: usize,
}

impl LoadWarnings {
    pub fn total(&self) -> usize {
        self.malformed_rows
            + self.unmatched_weather
            + self.unknown_building
            + self.dew_exceeds_air
            + self.cloud_out_of_range
    }
}

/// Joined records plus the anomaly counters accumulated while loading.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub records: Vec<JoinedRecord>,
    pub warnings: LoadWarnings,
}

pub fn parse_timestamp(text: &str) -> Result<i64> {
    let naive = NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT)
        .map_err(|e| Error::Data(format!("bad timestamp {text:?}: {e}")))?;
    Ok(naive.and_utc().timestamp().div_euclid(SECONDS_PER_HOUR))
}

pub fn format_timestamp(epoch_hour: i64) -> String {
    DateTime::from_timestamp(epoch_hour * SECONDS_PER_HOUR, 0)
        .expect("epoch hour within datetime range")
        .naive_utc()
        .format(TIMESTAMP_FORMAT)
        .to_string()
}

/// Finds each required column in a header row, tolerating extra columns and
/// arbitrary order. A missing column is a hard error.
fn column_indices(
    headers: &csv::StringRecord,
    required: &[&str],
    path: &Path,
) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| {
                    Error::Data(format!("{}: missing column {name:?}", path.display()))
                })
        })
        .collect()
}

fn parse_optional_f64(field: &str) -> std::result::Result<Option<f64>, ()> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match f64::from_str(field) {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Loads and joins the three CSVs. Meter rows join to weather through the
/// building-to-site mapping and the timestamp; rows that fail to parse are
/// skipped and counted, missing weather becomes missing markers.
pub fn load_csv(meter_path: &Path, weather_path: &Path, metadata_path: &Path) -> Result<LoadReport> {
    let mut warnings = LoadWarnings::default();

    // Building -> site.
    let mut sites: HashMap<u32, u32> = HashMap::new();
    {
        let mut reader = open_reader(metadata_path)?;
        let idx = column_indices(reader.headers()?, &["site_id", "building_id"], metadata_path)?;
        for row in reader.records() {
            let row = row?;
            let parsed = (|| {
                let site = row.get(idx[0])?.trim().parse::<u32>().ok()?;
                let building = row.get(idx[1])?.trim().parse::<u32>().ok()?;
                Some((building, site))
            })();
            match parsed {
                Some((building, site)) => {
                    sites.entry(building).or_insert(site);
                }
                None => warnings.malformed_rows += 1,
            }
        }
    }

    // (site, hour) -> weather triple.
    type WeatherTriple = (Option<f64>, Option<f64>, Option<f64>);
    let mut weather: HashMap<(u32, i64), WeatherTriple> = HashMap::new();
    {
        let mut reader = open_reader(weather_path)?;
        let idx = column_indices(
            reader.headers()?,
            &[
                "site_id",
                "timestamp",
                "air_temperature",
                "cloud_coverage",
                "dew_temperature",
            ],
            weather_path,
        )?;
        for row in reader.records() {
            let row = row?;
            let parsed = (|| {
                let site = row.get(idx[0])?.trim().parse::<u32>().ok()?;
                let hour = parse_timestamp(row.get(idx[1])?).ok()?;
                let t_a = parse_optional_f64(row.get(idx[2])?).ok()?;
                let cc = parse_optional_f64(row.get(idx[3])?).ok()?;
                let t_d = parse_optional_f64(row.get(idx[4])?).ok()?;
                Some((site, hour, t_a, cc, t_d))
            })();
            match parsed {
                Some((site, hour, t_a, mut cc, t_d)) => {
                    if let Some(v) = cc {
                        if !(0.0..=9.0).contains(&v) {
                            cc = None;
                            warnings.cloud_out_of_range += 1;
                        }
                    }
                    if let (Some(a), Some(d)) = (t_a, t_d) {
                        if d > a {
                            warnings.dew_exceeds_air += 1;
                        }
                    }
                    weather.entry((site, hour)).or_insert((t_a, cc, t_d));
                }
                None => warnings.malformed_rows += 1,
            }
        }
    }

    // Meter rows, joined.
    let mut records = Vec::new();
    {
        let mut reader = open_reader(meter_path)?;
        let idx = column_indices(
            reader.headers()?,
            &["building_id", "meter", "timestamp", "meter_reading"],
            meter_path,
        )?;
        for row in reader.records() {
            let row = row?;
            let parsed = (|| {
                let building = row.get(idx[0])?.trim().parse::<u32>().ok()?;
                let meter = Meter::try_from(row.get(idx[1])?.trim().parse::<u8>().ok()?).ok()?;
                let hour = parse_timestamp(row.get(idx[2])?).ok()?;
                let reading = parse_optional_f64(row.get(idx[3])?).ok()?;
                if matches!(reading, Some(r) if r < 0.0) {
                    return None;
                }
                Some((building, meter, hour, reading))
            })();
            let (building, meter, hour, reading) = match parsed {
                Some(p) => p,
                None => {
                    warnings.malformed_rows += 1;
                    continue;
                }
            };
            let site = match sites.get(&building) {
                Some(&s) => s,
                None => {
                    warnings.unknown_building += 1;
                    continue;
                }
            };
            let (t_a, cc, t_d) = match weather.get(&(site, hour)) {
                Some(&triple) => triple,
                None => {
                    warnings.unmatched_weather += 1;
                    (None, None, None)
                }
            };
            records.push(JoinedRecord {
                building_id: building,
                site_id: site,
                meter,
                epoch_hour: hour,
                reading,
                air_temperature: t_a,
                cloud_coverage: cc,
                dew_temperature: t_d,
            });
        }
    }

    records.sort_by_key(|r| (r.building_id, r.meter.code(), r.epoch_hour));
    if warnings.total() > 0 {
        log::warn!(
            "load: {} malformed, {} unmatched weather, {} unknown buildings, \
             {} dew>air, {} cloud out of range",
            warnings.malformed_rows,
            warnings.unmatched_weather,
            warnings.unknown_building,
            warnings.dew_exceeds_air,
            warnings.cloud_out_of_range
        );
    }
    Ok(LoadReport { records, warnings })
}

/// Imputes missing weather in place. Per site and variable: forward-fill
/// while within 24 hours of the last observation, otherwise fall back to the
/// site mean (then the global mean if a site never observed the variable).
/// Meter readings are left untouched — missing readings are handled by the
/// windowing mask, and no outliers are removed.
pub fn clean(records: &mut [JoinedRecord]) {
    const MAX_FILL_HOURS: i64 = 24;
    const VARS: usize = 3;

    let get = |r: &JoinedRecord, v: usize| match v {
        0 => r.air_temperature,
        1 => r.cloud_coverage,
        _ => r.dew_temperature,
    };

    // Distinct (site, hour) -> observed values.
    let mut per_site: BTreeMap<u32, BTreeMap<i64, [Option<f64>; VARS]>> = BTreeMap::new();
    for r in records.iter() {
        let entry = per_site
            .entry(r.site_id)
            .or_default()
            .entry(r.epoch_hour)
            .or_insert([None; VARS]);
        for (v, slot) in entry.iter_mut().enumerate() {
            if slot.is_none() {
                *slot = get(r, v);
            }
        }
    }

    let mut global_sum = [0.0; VARS];
    let mut global_count = [0usize; VARS];
    for hours in per_site.values() {
        for vals in hours.values() {
            for v in 0..VARS {
                if let Some(x) = vals[v] {
                    global_sum[v] += x;
                    global_count[v] += 1;
                }
            }
        }
    }
    let global_mean: Vec<f64> = (0..VARS)
        .map(|v| {
            if global_count[v] > 0 {
                global_sum[v] / global_count[v] as f64
            } else {
                0.0
            }
        })
        .collect();

    for hours in per_site.values_mut() {
        for v in 0..VARS {
            let (mut sum, mut count) = (0.0, 0usize);
            for vals in hours.values() {
                if let Some(x) = vals[v] {
                    sum += x;
                    count += 1;
                }
            }
            let site_mean = if count > 0 {
                sum / count as f64
            } else {
                global_mean[v]
            };
            let mut last: Option<(i64, f64)> = None;
            for (&hour, vals) in hours.iter_mut() {
                match vals[v] {
                    Some(x) => last = Some((hour, x)),
                    None => {
                        vals[v] = Some(match last {
                            Some((h, x)) if hour - h <= MAX_FILL_HOURS => x,
                            _ => site_mean,
                        });
                    }
                }
            }
        }
    }

    for r in records.iter_mut() {
        let vals = per_site[&r.site_id][&r.epoch_hour];
        r.air_temperature = vals[0];
        r.cloud_coverage = vals[1];
        r.dew_temperature = vals[2];
    }
}

/// Timestamp-derived features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub hour_sin: f64,
    pub hour_cos: f64,
    /// Monday = 0 … Sunday = 6.
    pub day_of_week: u32,
    /// Fixed-date calendar: Jan 1, Dec 25, Dec 26.
    pub is_holiday: bool,
}

pub fn time_features(epoch_hour: i64) -> TimeFeatures {
    let hour = epoch_hour.rem_euclid(24) as f64;
    let angle = std::f64::consts::TAU * hour / 24.0;
    // The epoch day (1970-01-01) was a Thursday, three days past Monday.
    let day_of_week = (epoch_hour.div_euclid(24) + 3).rem_euclid(7) as u32;
    let date = DateTime::from_timestamp(epoch_hour * SECONDS_PER_HOUR, 0)
        .expect("epoch hour within datetime range")
        .date_naive();
    let is_holiday = matches!(
        (date.month(), date.day()),
        (1, 1) | (12, 25) | (12, 26)
    );
    TimeFeatures {
        hour_sin: angle.sin(),
        hour_cos: angle.cos(),
        day_of_week,
        is_holiday,
    }
}

/// Which per-step feature vector to assemble.
///
/// `Minimal4` matches a 4-input model: `[log1p(reading), T_a/50, hour_sin,
/// hour_cos]`. `Full11` is the full 11-feature vector
/// `[log1p E, log1p C, log1p S, log1p H, T_a/50, CC, T_d/50, hour_sin,
/// hour_cos, dow/6, is_holiday]`, where E/C/S/H are the building's four
/// meter readings at that hour (0 when a meter is absent). Readings are
/// log1p'd and temperatures divided by 50 — per-step transforms only, so no
/// statistics leak across the temporal split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FeatureSet {
    #[default]
    Minimal4,
    Full11,
}

impl FeatureSet {
    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Minimal4 => 4,
            FeatureSet::Full11 => 11,
        }
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal4" => Ok(FeatureSet::Minimal4),
            "full11" => Ok(FeatureSet::Full11),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature set {other:?} (expected \"minimal4\" or \"full11\")"
            ))),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Minimal4 => write!(f, "minimal4"),
            FeatureSet::Full11 => write!(f, "full11"),
        }
    }
}

/// Provenance of one window, for prediction output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowMeta {
    pub building_id: u32,
    pub meter: u8,
    pub start_epoch_hour: i64,
}

/// Fixed-length windows ready for batching: inputs `(windows, seq_len,
/// features)`, log1p next-hour targets `(windows, seq_len, 1)`, and a
/// per-step validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
    pub windows: usize,
    pub seq_len: usize,
    pub features: usize,
    pub output_dim: usize,
    pub meta: Vec<WindowMeta>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows
    }

    pub fn is_empty(&self) -> bool {
        self.windows == 0
    }

    /// Copies the selected windows into one batch (inputs, targets, mask).
    pub fn gather(&self, indices: &[usize]) -> Result<(SequenceBatch, Vec<f64>, Vec<bool>)> {
        let step = self.seq_len * self.features;
        let t_step = self.seq_len * self.output_dim;
        let mut data = Vec::with_capacity(indices.len() * step);
        let mut targets = Vec::with_capacity(indices.len() * t_step);
        let mut mask = Vec::with_capacity(indices.len() * self.seq_len);
        for &w in indices {
            if w >= self.windows {
                return Err(Error::InvalidArgument(format!(
                    "window index {w} out of range ({} windows)",
                    self.windows
                )));
            }
            data.extend_from_slice(&self.inputs[w * step..(w + 1) * step]);
            targets.extend_from_slice(&self.targets[w * t_step..(w + 1) * t_step]);
            mask.extend_from_slice(&self.mask[w * self.seq_len..(w + 1) * self.seq_len]);
        }
        let batch = SequenceBatch::new(data, indices.len(), self.seq_len, self.features)?;
        Ok((batch, targets, mask))
    }

    pub fn validate_for(&self, config: &ModelConfig) -> Result<()> {
        if self.features != config.input_dim
            || self.seq_len != config.seq_len
            || self.output_dim != config.output_dim
        {
            return Err(Error::ShapeMismatch(format!(
                "dataset windows ({} features, len {}, {} outputs) do not fit a model \
                 expecting ({}, {}, {})",
                self.features,
                self.seq_len,
                self.output_dim,
                config.input_dim,
                config.seq_len,
                config.output_dim
            )));
        }
        Ok(())
    }
}

/// Assembles feature windows of `seq_len` consecutive hours per
/// (building, meter) series, advancing by `stride` hours. The target at step
/// `j` is `log1p(reading)` one hour after the input at `j`; absent or missing
/// next-hour readings mask the step out, and windows with more than 50%
/// masked targets are dropped. Weather must already be imputed ([`clean`]).
pub fn assemble_windows(
    records: &[JoinedRecord],
    feature_set: FeatureSet,
    seq_len: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if seq_len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "seq_len and stride must be at least 1".into(),
        ));
    }

    // (building, meter, hour) -> reading, for targets and sibling meters.
    let mut readings: HashMap<(u32, u8, i64), f64> = HashMap::new();
    for r in records {
        if let Some(x) = r.reading {
            readings.entry((r.building_id, r.meter.code(), r.epoch_hour)).or_insert(x);
        }
    }

    // Per-series hour-ordered rows (first occurrence wins on duplicates).
    let mut series: BTreeMap<(u32, u8), BTreeMap<i64, &JoinedRecord>> = BTreeMap::new();
    for r in records {
        series
            .entry((r.building_id, r.meter.code()))
            .or_default()
            .entry(r.epoch_hour)
            .or_insert(r);
    }

    let f_dim = feature_set.dim();
    let mut out = WindowedDataset {
        inputs: Vec::new(),
        targets: Vec::new(),
        mask: Vec::new(),
        windows: 0,
        seq_len,
        features: f_dim,
        output_dim: 1,
        meta: Vec::new(),
    };

    let mut features = vec![0.0; f_dim];
    for ((building, meter), rows) in &series {
        let hours: Vec<i64> = rows.keys().copied().collect();
        // Maximal runs of consecutive hours.
        let mut run_start = 0;
        for i in 0..hours.len() {
            let run_ends = i + 1 == hours.len() || hours[i + 1] != hours[i] + 1;
            if !run_ends {
                continue;
            }
            let run = &hours[run_start..=i];
            run_start = i + 1;
            if run.len() < seq_len {
                continue;
            }
            let mut s = 0;
            while s + seq_len <= run.len() {
                let start_hour = run[s];
                let mut masked_out = 0usize;
                let base_inputs = out.inputs.len();
                let base_targets = out.targets.len();
                let base_mask = out.mask.len();
                for j in 0..seq_len {
                    let hour = start_hour + j as i64;
                    let record = rows[&hour];
                    assemble_step(record, feature_set, &readings, &mut features)?;
                    out.inputs.extend_from_slice(&features);
                    match readings.get(&(*building, *meter, hour + 1)) {
                        Some(&next) => {
                            out.targets.push(next.ln_1p());
                            out.mask.push(true);
                        }
                        None => {
                            out.targets.push(0.0);
                            out.mask.push(false);
                            masked_out += 1;
                        }
                    }
                }
                if masked_out * 2 > seq_len {
                    out.inputs.truncate(base_inputs);
                    out.targets.truncate(base_targets);
                    out.mask.truncate(base_mask);
                } else {
                    out.windows += 1;
                    out.meta.push(WindowMeta {
                        building_id: *building,
                        meter: *meter,
                        start_epoch_hour: start_hour,
                    });
                }
                s += stride;
            }
        }
    }
    Ok(out)
}

fn assemble_step(
    record: &JoinedRecord,
    feature_set: FeatureSet,
    readings: &HashMap<(u32, u8, i64), f64>,
    out: &mut [f64],
) -> Result<()> {
    let t = time_features(record.epoch_hour);
    let t_a = record
        .air_temperature
        .ok_or_else(|| Error::Data("missing air temperature; run clean() first".into()))?;
    match feature_set {
        FeatureSet::Minimal4 => {
            out[0] = record.reading.unwrap_or(0.0).ln_1p();
            out[1] = t_a / 50.0;
            out[2] = t.hour_sin;
            out[3] = t.hour_cos;
        }
        FeatureSet::Full11 => {
            let cc = record
                .cloud_coverage
                .ok_or_else(|| Error::Data("missing cloud coverage; run clean() first".into()))?;
            let t_d = record
                .dew_temperature
                .ok_or_else(|| Error::Data("missing dew temperature; run clean() first".into()))?;
            for (slot, meter) in Meter::ALL.iter().enumerate() {
                let key = (record.building_id, meter.code(), record.epoch_hour);
                out[slot] = readings.get(&key).copied().unwrap_or(0.0).ln_1p();
            }
            out[4] = t_a / 50.0;
            out[5] = cc;
            out[6] = t_d / 50.0;
            out[7] = t.hour_sin;
            out[8] = t.hour_cos;
            out[9] = t.day_of_week as f64 / 6.0;
            out[10] = if t.is_holiday { 1.0 } else { 0.0 };
        }
    }
    Ok(())
}

/// Record-level temporal split. Cuts fall between distinct timestamps at the
/// positions closest to the requested row-count quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<JoinedRecord>,
    pub val: Vec<JoinedRecord>,
    pub test: Vec<JoinedRecord>,
    /// First timestamp of the validation and test portions, when non-empty.
    pub val_start: Option<i64>,
    pub test_start: Option<i64>,
}

/// Split ratios matching large-scale train/val/test row proportions.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.5770, 0.1694, 0.2536);

/// Splits records into three contiguous-in-time, pairwise-disjoint sets whose
/// sizes match `ratios` as closely as the timestamp ties allow. Records with
/// equal timestamps never straddle a boundary. Errors with fewer than 3
/// distinct timestamps.
pub fn temporal_split(
    records: &[JoinedRecord],
    ratios: (f64, f64, f64),
) -> Result<DatasetSplit> {
    let (r1, r2, r3) = ratios;
    if !(r1 >= 0.0 && r2 >= 0.0 && r3 >= 0.0) || (r1 + r2 + r3 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got ({r1}, {r2}, {r3})"
        )));
    }

    let mut sorted: Vec<&JoinedRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.epoch_hour, r.building_id, r.meter.code()));
    let n = sorted.len();

    let mut distinct = 0usize;
    for i in 0..n {
        if i == 0 || sorted[i].epoch_hour != sorted[i - 1].epoch_hour {
            distinct += 1;
        }
    }
    if distinct < 3 {
        return Err(Error::Data(format!(
            "temporal split needs at least 3 distinct timestamps, found {distinct}"
        )));
    }

    // A cut index k is admissible when it does not divide equal timestamps.
    let admissible = |k: usize| k == 0 || k == n || sorted[k - 1].epoch_hour != sorted[k].epoch_hour;
    let nearest_cut = |ideal: usize, lo: usize| -> usize {
        let ideal = ideal.clamp(lo, n);
        let mut down = ideal;
        while down > lo && !admissible(down) {
            down -= 1;
        }
        let mut up = ideal;
        while up < n && !admissible(up) {
            up += 1;
        }
        let down_ok = admissible(down) && down >= lo;
        let up_ok = admissible(up);
        match (down_ok, up_ok) {
            (true, true) => {
                if ideal - down <= up - ideal {
                    down
                } else {
                    up
                }
            }
            (true, false) => down,
            (false, true) => up,
            (false, false) => ideal,
        }
    };

    let cut1 = nearest_cut((n as f64 * r1).round() as usize, 0);
    let cut2 = nearest_cut((n as f64 * (r1 + r2)).round() as usize, cut1);

    let owned = |slice: &[&JoinedRecord]| slice.iter().map(|r| (*r).clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: owned(&sorted[..cut1]),
        val: owned(&sorted[cut1..cut2]),
        test: owned(&sorted[cut2..]),
        val_start: sorted.get(cut1).map(|r| r.epoch_hour),
        test_start: sorted.get(cut2).map(|r| r.epoch_hour),
    })
}

/// First hour of 2016-01-01 00:00:00 UTC, the synthetic series origin.
const SYNTH_START_HOUR: i64 = 1_451_606_400 / SECONDS_PER_HOUR;

/// Generates `l_total` hourly electricity readings for each of `n_buildings`
/// across two sites. Each series is a daily sinusoid plus a weekly square
/// wave plus a temperature-coupled term plus seeded noise, so with
/// `noise_amp = 0` every series is exactly 168-hour periodic. Readings stay
/// non-negative, weather fields are fully populated, and equal seeds produce
/// identical records.
pub fn synth_dataset(
    seed: u64,
    n_buildings: usize,
    l_total: usize,
    noise_amp: f64,
) -> Vec<JoinedRecord> {
    let tau = std::f64::consts::TAU;
    let mut records = Vec::with_capacity(n_buildings * l_total);
    for b in 0..n_buildings {
        let site = (b % 2) as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64).wrapping_mul(0x9E37_79B9));
        let base = 30.0 + 10.0 * rng.gen::<f64>();
        let daily_amp = 8.0 + 4.0 * rng.gen::<f64>();
        let weekly_amp = 3.0 + 2.0 * rng.gen::<f64>();
        let coupling = 0.3 + 0.2 * rng.gen::<f64>();
        let phase = tau * rng.gen::<f64>();
        for t in 0..l_total {
            let hour = SYNTH_START_HOUR + t as i64;
            let t_a = 10.0 + site as f64 + 8.0 * ((tau * (t % 24) as f64 / 24.0).sin());
            let cc = ((t % 168) / 24) as f64;
            let t_d = t_a - 5.0 + 2.0 * ((tau * (t % 168) as f64 / 168.0).sin());
            let daily = daily_amp * ((tau * (t % 24) as f64 / 24.0) + phase).sin();
            let weekly = if t % 168 < 84 { weekly_amp } else { -weekly_amp };
            let noise = noise_amp * rng.gen_range(-1.0..1.0);
            let reading = (base + daily + weekly + coupling * (t_a - 10.0) + noise).max(0.0);
            records.push(JoinedRecord {
                building_id: b as u32,
                site_id: site,
                meter: Meter::Electricity,
                epoch_hour: hour,
                reading: Some(reading),
                air_temperature: Some(t_a),
                cloud_coverage: Some(cc),
                dew_temperature: Some(t_d),
            });
        }
    }
    records
}

/// Writes records back out as the three loadable CSVs (floats in shortest
/// round-trip form, so a write/load cycle is lossless).
pub fn write_dataset_csvs(
    records: &[JoinedRecord],
    meter_path: &Path,
    weather_path: &Path,
    metadata_path: &Path,
) -> Result<()> {
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    let mut meter = std::io::BufWriter::new(std::fs::File::create(meter_path)?);
    writeln!(meter, "building_id,meter,timestamp,meter_reading")?;
    for r in records {
        writeln!(
            meter,
            "{},{},{},{}",
            r.building_id,
            r.meter.code(),
            format_timestamp(r.epoch_hour),
            fmt_opt(r.reading)
        )?;
    }
    meter.flush()?;

    let mut sites: Vec<(u32, u32)> = records.iter().map(|r| (r.building_id, r.site_id)).collect();
    sites.sort_unstable();
    sites.dedup();
    let mut metadata = std::io::BufWriter::new(std::fs::File::create(metadata_path)?);
    writeln!(
        metadata,
        "site_id,building_id,primary_use,square_feet,year_built,floor_count"
    )?;
    for (building, site) in sites {
        writeln!(metadata, "{site},{building},Education,10000,,")?;
    }
    metadata.flush()?;

    let mut cells: Vec<(u32, i64, Option<f64>, Option<f64>, Option<f64>)> = records
        .iter()
        .map(|r| {
            (
                r.site_id,
                r.epoch_hour,
                r.air_temperature,
                r.cloud_coverage,
                r.dew_temperature,
            )
        })
        .collect();
    cells.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    cells.dedup_by_key(|c| (c.0, c.1));
    let mut weather = std::io::BufWriter::new(std::fs::File::create(weather_path)?);
    writeln!(
        weather,
        "site_id,timestamp,air_temperature,cloud_coverage,dew_temperature"
    )?;
    for (site, hour, t_a, cc, t_d) in cells {
        writeln!(
            weather,
            "{},{},{},{},{}",
            site,
            format_timestamp(hour),
            fmt_opt(t_a),
            fmt_opt(cc),
            fmt_opt(t_d)
        )?;
    }
    weather.flush()?;
    Ok(())
}
