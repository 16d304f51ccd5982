//! Synthetic road networks with sinusoidal traffic and propagating congestion.

use chrono::{NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeriesDataset, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, RoadNetwork, Sensor};

pub const MAX_NODES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub nodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Connection radius in the unit square.
    pub radius: f64,
    /// Road distance per unit of planar distance.
    pub scale: f64,
    pub require_connected: bool,
    pub base: f64,
    pub amplitude: f64,
    /// Sinusoid period in steps (288 is one day at 5 minutes).
    pub period: f64,
    pub noise: f64,
    /// Fraction of congestion passed on from upstream neighbours per step.
    pub coupling: f64,
    /// Nodes that receive one congestion pulse per period at a fixed phase.
    pub daily_pulses: usize,
    /// Per-node, per-step probability that an unscheduled pulse starts.
    pub pulse_rate: f64,
    pub pulse_height: f64,
    /// Per-step retention of a pulse.
    pub pulse_decay: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            nodes: 10,
            steps: 2000,
            seed: 1,
            radius: 0.45,
            scale: 1.0,
            require_connected: true,
            base: 60.0,
            amplitude: 10.0,
            period: 288.0,
            noise: 0.1,
            coupling: 0.7,
            daily_pulses: 3,
            pulse_rate: 0.0,
            pulse_height: 12.0,
            pulse_decay: 0.8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.nodes > MAX_NODES {
            return Err(Error::Config(format!("synthetic networks need 1..={MAX_NODES} nodes")));
        }
        if self.steps == 0 {
            return Err(Error::Config("synthetic series needs at least one step".into()));
        }
        let finite = [
            self.radius,
            self.scale,
            self.base,
            self.amplitude,
            self.period,
            self.noise,
            self.coupling,
            self.pulse_height,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.radius <= 0.0 || self.scale <= 0.0 || self.period <= 0.0 {
            return Err(Error::Config("synthetic spec has invalid geometry or signal values".into()));
        }
        if self.daily_pulses > self.nodes {
            return Err(Error::Config("more pulse sources than nodes".into()));
        }
        if self.noise < 0.0 || !(0.0..1.0).contains(&self.coupling) {
            return Err(Error::Config("noise must be ≥ 0 and coupling in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.pulse_rate) || !(0.0..1.0).contains(&self.pulse_decay) {
            return Err(Error::Config("pulse rate must be in [0, 1] and decay in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub network: RoadNetwork,
    pub series: TimeSeriesDataset,
    /// Per-node sinusoid phase.
    pub phases: Vec<f64>,
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Points in the unit square joined when closer than `radius`, shortest
/// first, skipping any segment that would cross an accepted one.
fn planar_geometric_graph(points: &[[f64; 2]], radius: f64) -> Vec<(usize, usize)> {
    let n = points.len();
    let dist = |i: usize, j: usize| (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| dist(i, j) < radius)
        .collect();
    candidates.sort_by(|a, b| dist(a.0, a.1).total_cmp(&dist(b.0, b.1)));
    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for (i, j) in candidates {
        let crosses = accepted.iter().any(|&(k, l)| {
            i != k && i != l && j != k && j != l && segments_cross(points[i], points[j], points[k], points[l])
        });
        if !crosses {
            accepted.push((i, j));
        }
    }
    accepted
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Each of `daily_pulses` source nodes receives one congestion pulse per
/// period at a fixed offset.
/// Congestion follows `c_i(t) = κ·(e_i(t) + mean_{j→i} c_j(t−1))` and the
/// recorded signal is `base + A·sin(2πt/period + φ_i) − c_i(t) + noise`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.nodes;
    let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let pairs = planar_geometric_graph(&points, spec.radius);
    if spec.require_connected && !connected(n, &pairs) {
        return Err(Error::Data(format!(
            "synthetic network with {n} nodes and radius {} is disconnected",
            spec.radius
        )));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
    let sensors = points
        .iter()
        .zip(&ids)
        .map(|(p, id)| Sensor {
            id: id.clone(),
            longitude: p[0],
            latitude: p[1],
        })
        .collect();
    let mut edge_records = Vec::with_capacity(pairs.len() * 2);
    let mut upstream = vec![Vec::new(); n];
    for &(i, j) in &pairs {
        let d = (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]) * spec.scale;
        for (a, b) in [(i, j), (j, i)] {
            edge_records.push(EdgeRecord {
                from: ids[a].clone(),
                to: ids[b].clone(),
                distance: d,
            });
            upstream[b].push(a);
        }
    }
    let network = RoadNetwork::new(sensors, &edge_records)?;

    let phases: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
    let mut onsets: Vec<Option<usize>> = vec![None; n];
    let period = spec.period.round().max(1.0) as usize;
    for i in rand::seq::index::sample(&mut rng, n, spec.daily_pulses) {
        onsets[i] = Some(rng.gen_range(0..period));
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut pulse = vec![0.0; n];
    let mut congestion = vec![0.0; n];
    let mut values = Vec::with_capacity(spec.steps * n);
    for t in 0..spec.steps {
        for (i, p) in pulse.iter_mut().enumerate() {
            *p *= spec.pulse_decay;
            if onsets[i] == Some(t % period) {
                *p += spec.pulse_height;
            }
            if spec.pulse_rate > 0.0 && rng.gen::<f64>() < spec.pulse_rate {
                *p += spec.pulse_height;
            }
        }
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let inflow = if upstream[i].is_empty() {
                    0.0
                } else {
                    upstream[i].iter().map(|&j| congestion[j]).sum::<f64>() / upstream[i].len() as f64
                };
                spec.coupling * (pulse[i] + inflow)
            })
            .collect();
        congestion = next;
        for i in 0..n {
            let wave = spec.amplitude * (std::f64::consts::TAU * t as f64 / spec.period + phases[i]).sin();
            let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(spec.base + wave - congestion[i] + eps);
        }
    }
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let timestamps = (0..spec.steps)
        .map(|t| start + TimeDelta::seconds(STEP_SECONDS * t as i64))
        .collect();
    let series = TimeSeriesDataset::new(timestamps, ids, 1, values)?;
    Ok(SyntheticData {
        network,
        series,
        phases,
    })
}
