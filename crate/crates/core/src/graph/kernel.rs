use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::adjacency::{AdjacencyMatrix, GraphKind};
use crate::graph::embedding::LatentEmbedding;
use crate::graph::hyperbolic::hyperbolic_distance;
use crate::graph::shortest_path::DistanceMatrix;

/// Thresholded Gaussian kernel parameters: edge iff `exp(-D²/δ) ≥ ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub delta: f64,
    pub epsilon: f64,
}

impl KernelConfig {
    pub fn new(delta: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { delta, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("kernel delta must be positive, got {}", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "kernel epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// δ taken as the standard deviation of `values`; 1.0 when that is zero or undefined.
    pub fn std_delta(values: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
        if v.len() < 2 {
            return 1.0;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let std = var.sqrt();
        if std > 0.0 {
            std
        } else {
            1.0
        }
    }

    /// Kernel weight for one distance. `δ` divides the squared distance directly.
    pub fn weight(&self, distance: f64) -> f64 {
        if distance.is_finite() {
            (-(distance * distance) / self.delta).exp()
        } else {
            0.0
        }
    }

    pub fn connects(&self, distance: f64) -> bool {
        self.weight(distance) >= self.epsilon
    }
}

/// Distance graph from shortest-path distances.
pub fn gaussian_threshold_adjacency(d: &DistanceMatrix, cfg: &KernelConfig) -> Result<AdjacencyMatrix> {
    cfg.validate()?;
    Ok(AdjacencyMatrix::from_fn(d.len(), GraphKind::Distance, |i, j| {
        cfg.connects(d.get(i, j))
    }))
}

/// Pairwise hyperbolic distances between embedding rows.
#[allow(clippy::needless_range_loop)]
pub fn latent_distances(e: &LatentEmbedding) -> Result<DistanceMatrix> {
    let n = e.len();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = hyperbolic_distance(e.row(i), e.row(j))?;
            rows[i][j] = d;
            rows[j][i] = d;
        }
    }
    DistanceMatrix::from_rows(rows)
}

/// Latent graph: the same thresholded kernel over hyperbolic embedding distances.
pub fn build_latent_graph(e: &LatentEmbedding, cfg: &KernelConfig) -> Result<AdjacencyMatrix> {
    cfg.validate()?;
    let d = latent_distances(e)?;
    Ok(AdjacencyMatrix::from_fn(d.len(), GraphKind::Latent, |i, j| {
        cfg.connects(d.get(i, j))
    }))
}
