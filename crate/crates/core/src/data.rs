//! Series ingestion, normalisation, chronological splits and windowing.

use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling interval of every series.
pub const STEP_SECONDS: i64 = 300;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// `T × N × F` traffic values at a fixed 5-minute stride.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    timestamps: Vec<NaiveDateTime>,
    sensor_ids: Vec<String>,
    features: usize,
    values: Vec<f64>,
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.naive_utc());
    }
    for fmt in [TIME_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::Data(format!("cannot parse timestamp `{s}`")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

impl TimeSeriesDataset {
    pub fn new(timestamps: Vec<NaiveDateTime>, sensor_ids: Vec<String>, features: usize, values: Vec<f64>) -> Result<Self> {
        let (t, n) = (timestamps.len(), sensor_ids.len());
        if features == 0 {
            return Err(Error::Data("dataset needs at least one feature".into()));
        }
        if values.len() != t * n * features {
            return Err(Error::Data(format!(
                "expected {t}×{n}×{features} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let per = n * features;
            return Err(Error::Data(format!(
                "non-finite value at row {} column {}",
                i / per,
                (i % per) / features
            )));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if (w[1] - w[0]).num_seconds() != STEP_SECONDS {
                return Err(Error::Data(format!(
                    "irregular timestamps between row {i} ({}) and row {} ({}): expected a {STEP_SECONDS}s stride",
                    format_timestamp(&w[0]),
                    i + 1,
                    format_timestamp(&w[1])
                )));
            }
        }
        Ok(Self {
            timestamps,
            sensor_ids,
            features,
            values,
        })
    }

    /// Reads the CSV layout `timestamp,<id>,<id>,...` (one feature per sensor).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Data(format!("{}: need a timestamp column and at least one sensor", path.display())));
        }
        let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            timestamps.push(parse_timestamp(&record[0])?);
            for (col, field) in record.iter().skip(1).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!("row {row}, sensor `{}`: cannot parse `{field}`", ids[col]))
                })?;
                values.push(v);
            }
        }
        Self::new(timestamps, ids, 1, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.features != 1 {
            return Err(Error::Data("CSV export supports a single feature".into()));
        }
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.sensor_ids.iter().cloned());
        w.write_record(&header)?;
        let n = self.sensor_ids.len();
        for (t, ts) in self.timestamps.iter().enumerate() {
            let mut row = vec![format_timestamp(ts)];
            row.extend(self.values[t * n..(t + 1) * n].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reorders sensor columns to `order`; every id must be present exactly once.
    pub fn aligned_to(&self, order: &[String]) -> Result<Self> {
        let lookup: std::collections::HashMap<&str, usize> =
            self.sensor_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if lookup.len() != self.sensor_ids.len() {
            return Err(Error::Data("duplicate sensor column".into()));
        }
        let perm = order
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("series has no column for sensor `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = self.sensor_ids.iter().find(|id| !order.contains(id)) {
            return Err(Error::Data(format!("series column `{extra}` is not a known sensor")));
        }
        let (n, f) = (self.sensor_ids.len(), self.features);
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.len() {
            for &src in &perm {
                let at = (t * n + src) * f;
                values.extend_from_slice(&self.values[at..at + f]);
            }
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            sensor_ids: order.to_vec(),
            features: f,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values of rows `range`, still `T × N × F`.
    pub fn rows(&self, range: Range<usize>) -> &[f64] {
        let frame = self.nodes() * self.features;
        &self.values[range.start * frame..range.end * frame]
    }

    pub fn frame(&self) -> usize {
        self.nodes() * self.features
    }
}

/// Reads a series and aligns its columns to the graph's sensor order.
pub fn load_series(path: impl AsRef<Path>, sensor_order: &[String]) -> Result<TimeSeriesDataset> {
    TimeSeriesDataset::from_csv(path)?.aligned_to(sensor_order)
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Data("mean and std must be nonempty and equally long".into()));
        }
        if let Some(k) = std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Data(format!(
                "feature {k} has zero or invalid standard deviation; constant features cannot be normalised"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Population statistics of `values` laid out `... × F`.
    pub fn fit(values: &[f64], features: usize) -> Result<Self> {
        if features == 0 || values.is_empty() || !values.len().is_multiple_of(features) {
            return Err(Error::Data("cannot fit normalisation on empty data".into()));
        }
        let count = (values.len() / features) as f64;
        let mut mean = vec![0.0; features];
        for chunk in values.chunks(features) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; features];
        for chunk in values.chunks(features) {
            for k in 0..features {
                var[k] += (chunk[k] - mean[k]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn zscore(&self, values: &[f64]) -> Vec<f64> {
        let f = self.features();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect()
    }

    pub fn inverse(&self, values: &[f64]) -> Vec<f64> {
        let f = self.features();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % f] + self.mean[i % f])
            .collect()
    }
}

pub fn zscore(values: &[f64], stats: &NormStats) -> Vec<f64> {
    stats.zscore(values)
}

pub fn inverse_zscore(values: &[f64], stats: &NormStats) -> Vec<f64> {
    stats.inverse(values)
}

/// Chronological train/validation/test ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must sum to 1")));
        }
        Ok(())
    }

    /// Row ranges for a series of `len` steps; train and validation lengths
    /// are `floor(ratio × len)`, test takes the remainder.
    pub fn ranges(&self, len: usize) -> Result<[Range<usize>; 3]> {
        self.validate()?;
        let size = |r: f64| (r * len as f64 + 1e-9).floor() as usize;
        let train_end = size(self.train).min(len);
        let val_end = (train_end + size(self.val)).min(len);
        Ok([0..train_end, train_end..val_end, val_end..len])
    }
}

/// Contiguous `train → val → test` ranges, each long enough for one window.
pub fn chronological_split(len: usize, spec: &SplitSpec, min_len: usize) -> Result<[Range<usize>; 3]> {
    let ranges = spec.ranges(len)?;
    for (name, r) in ["train", "validation", "test"].iter().zip(&ranges) {
        if r.len() < min_len {
            return Err(Error::Data(format!(
                "{name} partition has {} steps, fewer than the {min_len} one window needs",
                r.len()
            )));
        }
    }
    Ok(ranges)
}

/// One supervised sample: inputs are rows `start..start+history`,
/// targets the `horizon` rows right after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Window {
    pub fn inputs(&self) -> Range<usize> {
        self.start..self.start + self.history
    }

    pub fn targets(&self) -> Range<usize> {
        self.start + self.history..self.start + self.history + self.horizon
    }
}

/// All stride-1 windows that fit inside `partition`.
pub fn make_windows(partition: Range<usize>, history: usize, horizon: usize) -> Result<Vec<Window>> {
    let span = history + horizon;
    if horizon == 0 || partition.len() < span {
        return Err(Error::Data(format!(
            "partition of {} steps cannot hold a {history}+{horizon} window",
            partition.len()
        )));
    }
    Ok((partition.start..=partition.end - span)
        .map(|start| Window {
            start,
            history,
            horizon,
        })
        .collect())
}

/// Shuffled index batches covering `0..count` once; the last batch may be short.
pub fn batch_iter(count: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// `inputs: B × T^h × N × F`, `targets: B × T^p × N × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub normalized: bool,
}

impl WindowBatch {
    /// Gathers `windows` from `values`, a `T × frame` array.
    pub fn gather(values: &[f64], nodes: usize, features: usize, windows: &[Window], normalized: bool) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let (th, tp) = (first.history, first.horizon);
        let frame = nodes * features;
        let rows = values.len() / frame.max(1);
        let mut inputs = Vec::with_capacity(windows.len() * th * frame);
        let mut targets = Vec::with_capacity(windows.len() * tp * frame);
        for w in windows {
            if w.history != th || w.horizon != tp || w.targets().end > rows {
                return Err(Error::Data(format!("window at {} does not fit the batch", w.start)));
            }
            inputs.extend_from_slice(&values[w.inputs().start * frame..w.inputs().end * frame]);
            targets.extend_from_slice(&values[w.targets().start * frame..w.targets().end * frame]);
        }
        let b = windows.len();
        Ok(Self {
            inputs: Tensor::new(vec![b, th, nodes, features], inputs)?,
            targets: Tensor::new(vec![b, tp, nodes, features], targets)?,
            normalized,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn history(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Step `t` of every input window, `B × N × F`.
    pub fn input_step(&self, t: usize) -> Tensor {
        step_of(&self.inputs, t)
    }

    pub fn target_step(&self, t: usize) -> Tensor {
        step_of(&self.targets, t)
    }
}

fn step_of(x: &Tensor, t: usize) -> Tensor {
    let s = x.shape();
    let (b, steps, frame) = (s[0], s[1], s[2] * s[3]);
    let mut out = Vec::with_capacity(b * frame);
    for i in 0..b {
        let at = (i * steps + t) * frame;
        out.extend_from_slice(&x.data()[at..at + frame]);
    }
    Tensor::new(vec![b, s[2], s[3]], out).expect("sizes agree")
}
