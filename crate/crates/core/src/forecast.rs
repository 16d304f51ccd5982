//! Single-window forecasts and region attention dumps.

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, TimeSeriesDataset, STEP_SECONDS};
use crate::dmgcn::channel_name;
use crate::error::{Error, Result};
use crate::model::{BoundModel, Dmgcrn};
use crate::tape::{Tape, Var};

/// One averaged attention weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    /// Recurrent step; the first `T^h` steps read the history window.
    pub timestep: usize,
    pub sensor_id: String,
    pub channel: String,
    pub region: usize,
    pub alpha: f64,
}

fn history_inputs(model: &Dmgcrn, stats: &NormStats, window: &TimeSeriesDataset, tape: &mut Tape) -> Result<Vec<Var>> {
    let cfg = &model.config;
    if window.len() < cfg.history {
        return Err(Error::Data(format!(
            "window has {} rows but the model reads {}",
            window.len(),
            cfg.history
        )));
    }
    if window.nodes() != model.nodes() || window.features() != cfg.features {
        return Err(Error::Data("window sensors or features do not match the model".into()));
    }
    let frame = window.frame();
    let start = window.len() - cfg.history;
    let normalized = stats.zscore(window.rows(start..window.len()));
    normalized
        .chunks(frame)
        .map(|row| tape.constant(&[model.nodes(), cfg.features], row.to_vec()))
        .collect()
}

fn run(bound: &mut BoundModel, tape: &mut Tape, inputs: &[Var], horizon: usize) -> Result<Vec<Var>> {
    let state = bound.encode(tape, inputs, &[])?;
    Ok(bound.decode_infer(tape, state, horizon, &[])?.predictions)
}

/// Forecasts the `T^p` steps after the last `T^h` rows of `window`, on the original scale.
pub fn predict_window(model: &Dmgcrn, stats: &NormStats, window: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
    let mut tape = Tape::new();
    let inputs = history_inputs(model, stats, window, &mut tape)?;
    let mut bound = model.bind_frozen(&mut tape)?;
    let horizon = model.config.horizon;
    let preds = run(&mut bound, &mut tape, &inputs, horizon)?;
    let mut values = Vec::with_capacity(horizon * window.frame());
    for p in preds {
        values.extend(stats.inverse(tape.value(p)));
    }
    let last = *window.timestamps().last().expect("window has rows");
    let timestamps = (1..=horizon as i64)
        .map(|k| last + TimeDelta::seconds(STEP_SECONDS * k))
        .collect();
    TimeSeriesDataset::new(timestamps, window.sensor_ids().to_vec(), window.features(), values)
}

/// Region attention for every recurrent step, averaged over layers and gates.
pub fn attention_rows(model: &Dmgcrn, stats: &NormStats, window: &TimeSeriesDataset) -> Result<Vec<AttentionRow>> {
    if !model.config.mechanisms.use_dynamic_regions {
        return Err(Error::Config("model has no region attention to export".into()));
    }
    let mut tape = Tape::new();
    let inputs = history_inputs(model, stats, window, &mut tape)?;
    let mut bound = model.bind_frozen(&mut tape)?;
    bound.capture = Some(Vec::new());
    let steps = inputs.len() + model.config.horizon;
    run(&mut bound, &mut tape, &inputs, model.config.horizon)?;
    let captures = bound.capture.take().unwrap_or_default();
    let per_step = captures.len() / steps;
    if per_step == 0 || captures.len() % steps != 0 {
        return Err(Error::Numerical("attention capture count does not match the step count".into()));
    }
    let n = model.nodes();
    let ids = window.sensor_ids();
    let mut rows = Vec::new();
    for (t, chunk) in captures.chunks(per_step).enumerate() {
        let mut kinds = Vec::new();
        for c in chunk {
            if !kinds.contains(&c.channel) {
                kinds.push(c.channel);
            }
        }
        for kind in kinds {
            let group: Vec<_> = chunk.iter().filter(|c| c.channel == kind).collect();
            let regions = *group[0].shape.last().expect("alpha has a region axis");
            let mut mean = vec![0.0; n * regions];
            for c in &group {
                for (m, a) in mean.iter_mut().zip(&c.alpha) {
                    *m += a / group.len() as f64;
                }
            }
            for (i, id) in ids.iter().enumerate() {
                for r in 0..regions {
                    rows.push(AttentionRow {
                        timestep: t,
                        sensor_id: id.clone(),
                        channel: channel_name(kind).to_string(),
                        region: r,
                        alpha: mean[i * regions + r],
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_attention_csv(path: impl AsRef<std::path::Path>, rows: &[AttentionRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
