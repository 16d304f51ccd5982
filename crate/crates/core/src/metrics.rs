//! MAE / RMSE / MAPE per horizon bucket, and the historical-average baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Entries with `|truth|` below this are left out of MAPE.
pub const MAPE_THRESHOLD: f64 = 1e-3;

/// Horizon buckets as inclusive 1-based step ranges.
pub const BUCKETS: [(&str, usize, usize); 3] = [("15min", 1, 3), ("30min", 4, 6), ("60min", 7, 12)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every truth value was masked.
    pub mape: Option<f64>,
    pub count: usize,
    /// Entries excluded from MAPE.
    pub mape_masked: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    abs: f64,
    sq: f64,
    ape: f64,
    count: usize,
    masked: usize,
}

impl Sums {
    fn add(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if truth.abs() >= MAPE_THRESHOLD {
            self.ape += (e / truth).abs();
        } else {
            self.masked += 1;
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.ape += o.ape;
        self.count += o.count;
        self.masked += o.masked;
    }

    fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        let kept = self.count - self.masked;
        Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: (kept > 0).then(|| 100.0 * self.ape / kept as f64),
            count: self.count,
            mape_masked: self.masked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub label: String,
    pub first_step: usize,
    pub last_step: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: usize,
    pub buckets: Vec<BucketMetrics>,
    pub overall: Metrics,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// MAE ≤ RMSE and nonnegativity for every entry.
    pub fn is_consistent(&self) -> bool {
        let ok = |m: &Metrics| {
            m.mae >= 0.0 && m.rmse >= 0.0 && m.mae <= m.rmse * (1.0 + 1e-12) + 1e-15 && m.mape.is_none_or(|p| p >= 0.0)
        };
        ok(&self.overall) && self.buckets.iter().all(|b| ok(&b.metrics))
    }
}

/// Streaming accumulator over forecasts shaped `[T^p, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    steps: Vec<Sums>,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize) -> Self {
        Self {
            steps: vec![Sums::default(); horizon],
        }
    }

    /// Adds one horizon step worth of entries.
    pub fn add_step(&mut self, step: usize, pred: &[f64], truth: &[f64]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape("metrics", &[pred.len()], &[truth.len()]));
        }
        let s = self
            .steps
            .get_mut(step)
            .ok_or_else(|| Error::Data(format!("step {step} beyond horizon")))?;
        for (&p, &t) in pred.iter().zip(truth) {
            s.add(p, t);
        }
        Ok(())
    }

    /// Adds `[T^p, ...]` tensors.
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() || pred.shape().first() != Some(&self.steps.len()) {
            return Err(Error::shape("metrics", pred.shape(), truth.shape()));
        }
        let per = pred.numel() / self.steps.len();
        for t in 0..self.steps.len() {
            self.add_step(t, &pred.data()[t * per..(t + 1) * per], &truth.data()[t * per..(t + 1) * per])?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.steps.len() != self.steps.len() {
            return Err(Error::Data("cannot merge accumulators of different horizons".into()));
        }
        for (a, b) in self.steps.iter_mut().zip(&other.steps) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let pool = |range: std::ops::Range<usize>| {
            let mut s = Sums::default();
            for step in &self.steps[range] {
                s.merge(step);
            }
            s.finish()
        };
        let horizon = self.steps.len();
        let buckets = BUCKETS
            .iter()
            .filter(|(_, first, _)| *first <= horizon)
            .map(|&(label, first, last)| {
                let last = last.min(horizon);
                BucketMetrics {
                    label: label.to_string(),
                    first_step: first,
                    last_step: last,
                    metrics: pool(first - 1..last),
                }
            })
            .collect();
        MetricsReport {
            horizon,
            buckets,
            overall: pool(0..horizon),
        }
    }
}

/// Report for `[T^p, ...]` predictions against truth on the original scale.
pub fn metrics(pred: &Tensor, truth: &Tensor) -> Result<MetricsReport> {
    let horizon = *pred.shape().first().ok_or_else(|| Error::Data("metrics need a horizon axis".into()))?;
    let mut acc = MetricsAccumulator::new(horizon);
    acc.add(pred, truth)?;
    Ok(acc.report())
}

/// Mean of a `[T^h, ...]` window repeated over `horizon` steps.
pub fn ha_baseline(window: &Tensor, horizon: usize) -> Result<Tensor> {
    let s = window.shape();
    let steps = *s.first().ok_or_else(|| Error::Data("window needs a time axis".into()))?;
    if steps == 0 {
        return Err(Error::Data("empty history window".into()));
    }
    let per = window.numel() / steps;
    let mut mean = vec![0.0; per];
    for t in 0..steps {
        for (m, v) in mean.iter_mut().zip(&window.data()[t * per..(t + 1) * per]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= steps as f64);
    let mut shape = s.to_vec();
    shape[0] = horizon;
    Tensor::new(shape, mean.repeat(horizon))
}
