//! Scheduled-sampling training, evaluation and checkpoints.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::data::{batch_iter, make_windows, NormStats, SplitSpec, TimeSeriesDataset, Window, WindowBatch};
use crate::dmgcn::GraphSet;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{l1_loss, sample_teacher_forcing, Dmgcrn, ModelConfig};
use crate::params::ParamStore;
use crate::region::RegionTensor;
use crate::schedule::{teacher_forcing_prob, LrSchedule};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Zero-based epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub epochs: usize,
    /// Scheduled-sampling constant τ.
    pub tau: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation MAE improvement.
    pub patience: Option<usize>,
    /// Each batch is split into this many gradient shards, reduced in order.
    pub shards: usize,
    /// Masks are clamped where a row's masked degree plus self-loop falls to this value.
    pub mask_degree_floor: f64,
    /// Use an evenly spaced subset of at most this many training windows.
    pub max_train_windows: Option<usize>,
    /// Same for validation and test windows.
    pub max_eval_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            lr_decay: 0.2,
            lr_milestones: vec![30, 40, 50],
            epochs: 80,
            tau: 3000.0,
            seed: 42,
            patience: Some(15),
            shards: 1,
            mask_degree_floor: 1e-3,
            max_train_windows: None,
            max_eval_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.learning_rate,
            decay: self.lr_decay,
            milestones: self.lr_milestones.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if !(self.lr_decay < 1.0) {
            return Err(Error::Config("lr decay must be below 1".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lr milestones must be strictly increasing".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.shards == 0 {
            return Err(Error::Config("shards must be positive".into()));
        }
        if !(self.mask_degree_floor > 0.0 && self.mask_degree_floor < 1.0) {
            return Err(Error::Config("mask degree floor must lie in (0, 1)".into()));
        }
        if self.max_train_windows == Some(0) || self.max_eval_windows == Some(0) {
            return Err(Error::Config("window caps must be positive".into()));
        }
        Ok(())
    }
}

/// At most `cap` windows, evenly spaced through `windows`.
pub fn spaced(windows: Vec<Window>, cap: Option<usize>) -> Vec<Window> {
    match cap {
        Some(k) if k < windows.len() => (0..k).map(|i| windows[i * windows.len() / k]).collect(),
        _ => windows,
    }
}

/// A normalised series with its chronological windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastData {
    pub stats: NormStats,
    pub nodes: usize,
    pub features: usize,
    pub ranges: [Range<usize>; 3],
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl ForecastData {
    /// Splits chronologically and fits normalisation on the training rows.
    pub fn new(series: &TimeSeriesDataset, split: &SplitSpec, history: usize, horizon: usize) -> Result<Self> {
        let ranges = crate::data::chronological_split(series.len(), split, history + horizon)?;
        let stats = NormStats::fit(series.rows(ranges[0].clone()), series.features())?;
        Self::with_stats(series, split, history, horizon, stats)
    }

    pub fn with_stats(
        series: &TimeSeriesDataset,
        split: &SplitSpec,
        history: usize,
        horizon: usize,
        stats: NormStats,
    ) -> Result<Self> {
        if stats.features() != series.features() {
            return Err(Error::Data("normalisation stats do not match the feature count".into()));
        }
        let ranges = crate::data::chronological_split(series.len(), split, history + horizon)?;
        let windows = |r: &Range<usize>| make_windows(r.clone(), history, horizon);
        Ok(Self {
            nodes: series.nodes(),
            features: series.features(),
            train: windows(&ranges[0])?,
            val: windows(&ranges[1])?,
            test: windows(&ranges[2])?,
            raw: series.values().to_vec(),
            normalized: stats.zscore(series.values()),
            stats,
            ranges,
        })
    }

    pub fn batch(&self, windows: &[Window]) -> Result<WindowBatch> {
        WindowBatch::gather(&self.normalized, self.nodes, self.features, windows, true)
    }

    pub fn raw_batch(&self, windows: &[Window]) -> Result<WindowBatch> {
        WindowBatch::gather(&self.raw, self.nodes, self.features, windows, false)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: Option<f64>,
    pub lr: f64,
    pub teacher_forcing_prob: f64,
}

pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if log.is_empty() {
        w.write_record(["epoch", "train_loss", "val_mae", "val_rmse", "val_mape", "lr", "teacher_forcing_prob"])?;
    }
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

fn numerical_context(e: Error, what: &str) -> Error {
    match e {
        Error::NonFinite(op) => Error::Numerical(format!("{what}: non-finite value in {op}")),
        Error::Numerical(msg) => Error::Numerical(format!("{what}: {msg}")),
        other => other,
    }
}

/// Loss and parameter gradients for one shard of a batch.
fn shard_gradients(
    model: &Dmgcrn,
    stats: &NormStats,
    batch: &WindowBatch,
    raw_targets: &Tensor,
    teacher: &[bool],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let mut bound = model.bind(&mut tape)?;
    let b = batch.batch_size();
    let inputs = (0..batch.history())
        .map(|t| tape.leaf(&batch.input_step(t)))
        .collect::<Result<Vec<_>>>()?;
    let state = bound.encode(&mut tape, &inputs, &[b])?;
    let labels = (0..batch.horizon())
        .map(|t| tape.leaf(&batch.target_step(t)))
        .collect::<Result<Vec<_>>>()?;
    let out = bound.decode(&mut tape, state, Some(&labels), teacher.to_vec(), &[b])?;
    let loss = raw_scale_loss(&mut tape, &out.predictions, stats, raw_targets)?;
    let value = tape.scalar_value(loss).expect("scalar loss");
    let mut grads = tape.backward(loss)?;
    let grads = model.params.collect_grads(bound.bindings(), &mut grads)?;
    Ok((value, grads))
}

/// L1 between de-normalised predictions `[B, T^p, N, F]` and raw targets.
pub fn raw_scale_loss(tape: &mut Tape, predictions: &[Var], stats: &NormStats, raw_targets: &Tensor) -> Result<Var> {
    let pred = tape.stack(predictions, 1)?;
    let pred = tape.affine(pred, &stats.std, &stats.mean)?;
    let truth = tape.leaf(raw_targets)?;
    l1_loss(tape, pred, truth)
}

/// Free-running forecasts on the original scale, `[B, T^p, N, F]`.
pub fn predict_batch(model: &Dmgcrn, stats: &NormStats, batch: &WindowBatch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut bound = model.bind_frozen(&mut tape)?;
    let b = batch.batch_size();
    let inputs = (0..batch.history())
        .map(|t| tape.leaf(&batch.input_step(t)))
        .collect::<Result<Vec<_>>>()?;
    let state = bound.encode(&mut tape, &inputs, &[b])?;
    let out = bound.decode_infer(&mut tape, state, model.config.horizon, &[b])?;
    let pred = tape.stack(&out.predictions, 1)?;
    let pred = tape.affine(pred, &stats.std, &stats.mean)?;
    Ok(tape.tensor(pred))
}

/// Adds `[B, T^p, ...]` forecasts to a per-step accumulator.
pub fn accumulate_batch(acc: &mut MetricsAccumulator, pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() || pred.rank() < 2 {
        return Err(Error::shape("metrics", pred.shape(), truth.shape()));
    }
    let (b, tp) = (pred.shape()[0], pred.shape()[1]);
    let per = pred.numel() / (b * tp);
    for i in 0..b {
        for t in 0..tp {
            let at = (i * tp + t) * per;
            acc.add_step(t, &pred.data()[at..at + per], &truth.data()[at..at + per])?;
        }
    }
    Ok(())
}

/// Metrics of free-running forecasts over `windows`, batches scored via `exec`.
pub fn evaluate(model: &Dmgcrn, data: &ForecastData, windows: &[Window], exec: Execution) -> Result<MetricsReport> {
    let horizon = model.config.horizon;
    let chunks: Vec<&[Window]> = windows.chunks(model.config.batch_size).collect();
    let parts = exec.map(chunks, |chunk| -> Result<MetricsAccumulator> {
        let mut acc = MetricsAccumulator::new(horizon);
        let pred = predict_batch(model, &data.stats, &data.batch(chunk)?)?;
        accumulate_batch(&mut acc, &pred, &data.raw_batch(chunk)?.targets)?;
        Ok(acc)
    });
    let mut total = MetricsAccumulator::new(horizon);
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total.report())
}

/// Historical-average metrics over `windows`.
pub fn evaluate_ha(data: &ForecastData, windows: &[Window]) -> Result<MetricsReport> {
    let horizon = windows.first().map_or(1, |w| w.horizon);
    let mut acc = MetricsAccumulator::new(horizon);
    for w in windows {
        let b = data.raw_batch(std::slice::from_ref(w))?;
        let s = b.inputs.shape();
        let window = b.inputs.clone().reshape(&s[1..])?;
        let pred = crate::metrics::ha_baseline(&window, horizon)?;
        let truth = b.targets.clone().reshape(&b.targets.shape()[1..])?;
        acc.add(&pred, &truth)?;
    }
    Ok(acc.report())
}

/// Optimizer, schedules and the model being trained.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Dmgcrn,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub stats: NormStats,
    pub exec: Execution,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub iteration: u64,
    rng: ChaCha8Rng,
    mask_supports: Vec<(String, RegionTensor)>,
}

impl Trainer {
    pub fn new(model: Dmgcrn, config: TrainConfig, stats: NormStats, exec: Execution) -> Result<Self> {
        config.validate()?;
        let mut mask_supports = Vec::new();
        for gates in model.layouts() {
            for layout in gates {
                for (name, kind) in layout.mask_names() {
                    mask_supports.push((name, layout.support(kind, &model.graphs)?));
                }
            }
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            adam: AdamState::default(),
            config,
            stats,
            exec,
            epoch: 0,
            iteration: 0,
            mask_supports,
        })
    }

    /// Probability of teacher forcing at the next optimizer step.
    pub fn teacher_forcing_prob(&self) -> f64 {
        teacher_forcing_prob(self.iteration + 1, self.config.tau)
    }

    /// Batch loss and summed gradients, without touching parameters.
    pub fn batch_gradients(&self, data: &ForecastData, windows: &[Window], teacher: &[bool]) -> Result<(f64, Vec<Vec<f64>>)> {
        let total = windows.len();
        let size = total.div_ceil(self.config.shards.min(total).max(1));
        let chunks: Vec<&[Window]> = windows.chunks(size).collect();
        let results = self.exec.map(chunks, |chunk| -> Result<(f64, Vec<Vec<f64>>, f64)> {
            let batch = data.batch(chunk)?;
            let raw = data.raw_batch(chunk)?.targets;
            let (loss, grads) = shard_gradients(&self.model, &self.stats, &batch, &raw, teacher)?;
            Ok((loss, grads, chunk.len() as f64 / total as f64))
        });
        let mut loss = 0.0;
        let mut summed: Option<Vec<Vec<f64>>> = None;
        for r in results {
            let (l, g, weight) = r?;
            loss += weight * l;
            match summed.as_mut() {
                None => summed = Some(g.into_iter().map(|v| v.into_iter().map(|x| weight * x).collect()).collect()),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += weight * y);
                    }
                }
            }
        }
        Ok((loss, summed.unwrap_or_default()))
    }

    /// One optimizer step on `windows`; returns the batch loss.
    pub fn train_step(&mut self, data: &ForecastData, windows: &[Window], lr: f64, label: &str) -> Result<f64> {
        let p = self.teacher_forcing_prob();
        let horizon = self.model.config.horizon;
        let teacher: Vec<bool> = (0..horizon)
            .map(|t| t > 0 && sample_teacher_forcing(p, &mut self.rng))
            .collect();
        let (loss, grads) = self
            .batch_gradients(data, windows, &teacher)
            .map_err(|e| numerical_context(e, label))?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("{label}: non-finite loss or gradient ({loss})")));
        }
        self.model.params.clear_grads();
        self.model.params.add_grads(&grads, 1.0)?;
        self.adam.step(&mut self.model.params, lr)?;
        guard_masks(&mut self.model.params, &self.mask_supports, self.config.mask_degree_floor);
        self.iteration += 1;
        Ok(loss)
    }

    /// One pass over the (possibly capped) training windows plus validation.
    pub fn run_epoch(&mut self, data: &ForecastData) -> Result<EpochLog> {
        let lr = self.config.schedule().lr_at(self.epoch);
        let windows = spaced(data.train.clone(), self.config.max_train_windows);
        let order = batch_iter(
            windows.len(),
            self.model.config.batch_size,
            self.config.seed.wrapping_mul(1_000_003).wrapping_add(self.epoch as u64),
        );
        let mut loss_sum = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let batch: Vec<Window> = idx.iter().map(|&i| windows[i]).collect();
            let label = format!("epoch {} batch {b}", self.epoch + 1);
            loss_sum += self.train_step(data, &batch, lr, &label)? * batch.len() as f64;
        }
        let val_windows = spaced(data.val.clone(), self.config.max_eval_windows);
        let val = evaluate(&self.model, data, &val_windows, self.exec)?;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            train_loss: loss_sum / windows.len() as f64,
            val_mae: val.overall.mae,
            val_rmse: val.overall.rmse,
            val_mape: val.overall.mape,
            lr,
            teacher_forcing_prob: teacher_forcing_prob(self.iteration.max(1), self.config.tau),
        })
    }

    /// Trains until the configured epoch count or early stop; the best
    /// validation parameters are restored at the end.
    pub fn fit(&mut self, data: &ForecastData, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let mut best = (f64::INFINITY, self.epoch, self.model.params.clone());
        let mut stopped_early = false;
        while self.epoch < self.config.epochs {
            let row = self.run_epoch(data)?;
            on_epoch(&row);
            if row.val_mae < best.0 {
                best = (row.val_mae, row.epoch, self.model.params.clone());
            }
            let stale = row.epoch - best.1;
            log.push(row);
            if self.config.patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
        let (best_val_mae, best_epoch, params) = best;
        self.model.params = params;
        Ok(TrainOutcome {
            log,
            best_epoch,
            best_val_mae,
            stopped_early,
        })
    }

    pub fn checkpoint(&self, config_hash: &str, graph_hash: &str, sensor_ids: &[String], split: &SplitSpec) -> Checkpoint {
        let mut params = self.model.params.clone();
        params.clear_grads();
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            model_config: self.model.config.clone(),
            config_hash: config_hash.to_string(),
            graph_hash: graph_hash.to_string(),
            sensor_ids: sensor_ids.to_vec(),
            split: *split,
            epoch: self.epoch,
            iteration: self.iteration,
            norm: self.stats.clone(),
            graphs: self.model.graphs.clone(),
            params,
            adam: self.adam.clone(),
        }
    }
}

/// Clamps negative mask entries in any row-region whose masked degree plus
/// self-loop has fallen to `floor`, keeping degree normalisation defined.
/// Returns the number of entries changed.
pub fn guard_masks(params: &mut ParamStore, supports: &[(String, RegionTensor)], floor: f64) -> usize {
    let mut changed = 0;
    for (name, support) in supports {
        let Some(mask) = params.get_mut(name) else { continue };
        let n = support.len();
        let m = mask.data_mut();
        for r in 0..support.regions() {
            let s = support.slice(r);
            for i in 0..n {
                let row = i * n..(i + 1) * n;
                let degree: f64 = row.clone().map(|k| m[k] * s[k]).sum();
                if degree + 1.0 <= floor {
                    for k in row {
                        if s[k] != 0.0 && m[k] < 0.0 {
                            m[k] = 0.0;
                            changed += 1;
                        }
                    }
                }
            }
        }
    }
    changed
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Everything needed to resume or serve a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model_config: ModelConfig,
    pub config_hash: String,
    pub graph_hash: String,
    pub sensor_ids: Vec<String>,
    pub split: SplitSpec,
    pub epoch: usize,
    pub iteration: u64,
    pub norm: NormStats,
    pub graphs: GraphSet,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: not a valid checkpoint: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format {}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn model(&self) -> Result<Dmgcrn> {
        Dmgcrn::from_params(self.model_config.clone(), self.graphs.clone(), self.params.clone())
    }

    /// Refuses graphs whose hash differs from the one the model was trained on.
    pub fn check_graph_hash(&self, graph_hash: &str) -> Result<()> {
        if self.graph_hash != graph_hash {
            return Err(Error::Data(format!(
                "graph hash mismatch: checkpoint was trained on {} but the graphs hash to {graph_hash}",
                self.graph_hash
            )));
        }
        Ok(())
    }
}
