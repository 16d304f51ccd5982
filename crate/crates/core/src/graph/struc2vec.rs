//! Exact struc2vec: ring degree sequences, layered DTW structural distances,
//! a multilayer context graph, biased walks on it and skip-gram with
//! negative sampling.

use std::collections::VecDeque;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::adjacency::AdjacencyMatrix;
use crate::graph::dtw::dtw_cost;
use crate::graph::embedding::{rescale_to_unit_disk, LatentEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Struc2vecConfig {
    /// Deepest ring compared (k*). `None` uses the graph diameter.
    pub max_layer: Option<usize>,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    /// Probability of stepping inside the current layer instead of switching layers.
    pub stay_probability: f64,
    pub learning_rate: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for Struc2vecConfig {
    fn default() -> Self {
        Self {
            max_layer: None,
            walks_per_node: 10,
            walk_length: 40,
            window: 5,
            negative: 5,
            epochs: 5,
            stay_probability: 0.3,
            learning_rate: 0.025,
            dim: 2,
            seed: 7,
        }
    }
}

impl Struc2vecConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("negative", self.negative),
            ("epochs", self.epochs),
            ("dim", self.dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("struc2vec {name} must be positive")));
        }
        if !(self.stay_probability > 0.0 && self.stay_probability <= 1.0) {
            return Err(Error::Config("struc2vec stay_probability must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("struc2vec learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Undirected neighbour lists of `adj`.
fn neighbor_lists(adj: &AdjacencyMatrix) -> Vec<Vec<usize>> {
    adj.undirected_neighbors()
}

/// Hop distances from `source`; `usize::MAX` where unreachable.
fn bfs(neighbors: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut hops = vec![usize::MAX; neighbors.len()];
    hops[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if hops[v] == usize::MAX {
                hops[v] = hops[u] + 1;
                queue.push_back(v);
            }
        }
    }
    hops
}

/// Largest finite hop distance between any pair.
pub fn hop_diameter(adj: &AdjacencyMatrix) -> usize {
    let nb = neighbor_lists(adj);
    (0..nb.len())
        .flat_map(|s| bfs(&nb, s).into_iter().filter(|&h| h != usize::MAX))
        .max()
        .unwrap_or(0)
}

/// `seqs[u][k]`: ascending degrees of the nodes exactly `k` hops from `u`, for `k ≤ max_layer`.
pub fn ring_degree_sequences(adj: &AdjacencyMatrix, max_layer: usize) -> Vec<Vec<Vec<f64>>> {
    let nb = neighbor_lists(adj);
    let degree: Vec<f64> = nb.iter().map(|l| l.len() as f64).collect();
    (0..nb.len())
        .map(|u| {
            let hops = bfs(&nb, u);
            let mut rings = vec![Vec::new(); max_layer + 1];
            for (v, &h) in hops.iter().enumerate() {
                if h <= max_layer {
                    rings[h].push(degree[v]);
                }
            }
            for r in &mut rings {
                r.sort_by(f64::total_cmp);
            }
            rings
        })
        .collect()
}

/// Cumulative structural distances `f_k(u, v)` for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralDistances {
    n: usize,
    layers: Vec<Vec<f64>>,
}

impl StructuralDistances {
    pub fn compute(seqs: &[Vec<Vec<f64>>], exec: Execution) -> Self {
        let n = seqs.len();
        let depth = seqs.first().map_or(0, Vec::len);
        // rows[u][k][v]
        let rows = exec.map_range(n, |u| {
            let mut per_layer = vec![vec![0.0; n]; depth];
            for v in 0..n {
                let mut acc = 0.0;
                for k in 0..depth {
                    acc += dtw_cost(&seqs[u][k], &seqs[v][k]);
                    per_layer[k][v] = acc;
                }
            }
            per_layer
        });
        let layers = (0..depth)
            .map(|k| rows.iter().flat_map(|r| r[k].iter().copied()).collect())
            .collect();
        Self { n, layers }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn get(&self, k: usize, u: usize, v: usize) -> f64 {
        self.layers[k][u * self.n + v]
    }
}

/// Candidate targets of one node and their sampler.
type Moves = Option<(Vec<usize>, WeightedIndex<f64>)>;

/// Within-layer transition tables plus layer-switch probabilities.
struct MultilayerGraph {
    n: usize,
    /// `moves[k][u]`: candidate targets and their sampler.
    moves: Vec<Vec<Moves>>,
    /// `up[k][u]`: probability of moving to layer k+1 when switching.
    up: Vec<Vec<f64>>,
}

impl MultilayerGraph {
    fn build(dist: &StructuralDistances) -> Self {
        let n = dist.n;
        let depth = dist.layer_count();
        let mut moves = Vec::with_capacity(depth);
        let mut up = Vec::with_capacity(depth);
        for k in 0..depth {
            let weight = |u: usize, v: usize| (-dist.get(k, u, v)).exp();
            let pairs = (n * n.saturating_sub(1)).max(1) as f64;
            let mean = (0..n)
                .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
                .map(|(u, v)| weight(u, v))
                .sum::<f64>()
                / pairs;
            let mut layer_moves = Vec::with_capacity(n);
            let mut layer_up = Vec::with_capacity(n);
            for u in 0..n {
                let targets: Vec<usize> = (0..n).filter(|&v| v != u).collect();
                let weights: Vec<f64> = targets.iter().map(|&v| weight(u, v)).collect();
                let gamma = weights.iter().filter(|&&w| w > mean).count() as f64;
                let w_up = (gamma + std::f64::consts::E).ln();
                layer_up.push(w_up / (w_up + 1.0));
                layer_moves.push(WeightedIndex::new(&weights).ok().map(|d| (targets, d)));
            }
            moves.push(layer_moves);
            up.push(layer_up);
        }
        Self { n, moves, up }
    }

    fn walk(&self, start: usize, cfg: &Struc2vecConfig, rng: &mut impl Rng) -> Vec<usize> {
        let top = self.moves.len().saturating_sub(1);
        let mut walk = vec![start];
        let (mut u, mut k) = (start, 0);
        while walk.len() < cfg.walk_length {
            if rng.gen::<f64>() < cfg.stay_probability {
                let Some((targets, dist)) = &self.moves[k][u] else {
                    break;
                };
                u = targets[dist.sample(rng)];
                walk.push(u);
            } else if rng.gen::<f64>() < self.up[k][u] {
                if k < top {
                    k += 1;
                }
            } else {
                k = k.saturating_sub(1);
            }
        }
        walk
    }
}

/// Biased multilayer walks, ordered round by round then by start node.
pub fn structural_walks(dist: &StructuralDistances, cfg: &Struc2vecConfig, exec: Execution) -> Vec<Vec<usize>> {
    let graph = MultilayerGraph::build(dist);
    let per_node = exec.map_range(graph.n, |u| {
        (0..cfg.walks_per_node)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((u * cfg.walks_per_node + w) as u64 + 1);
                graph.walk(u, cfg, &mut rng)
            })
            .collect::<Vec<_>>()
    });
    (0..cfg.walks_per_node)
        .flat_map(|w| per_node.iter().map(move |walks| walks[w].clone()))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling over node walks; returns `n × dim` input vectors.
pub fn skip_gram(walks: &[Vec<usize>], n: usize, cfg: &Struc2vecConfig) -> Vec<f64> {
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..n * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; n * dim];
    let mut counts = vec![0.0f64; n];
    for &v in walks.iter().flatten() {
        counts[v] += 1.0;
    }
    let Ok(noise) = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75))) else {
        return input;
    };
    let total_steps = (cfg.epochs * walks.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lr = (cfg.learning_rate * (1.0 - step as f64 / total_steps))
                    .max(cfg.learning_rate * 1e-4);
                step += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for s in 0..=cfg.negative {
                        let (target, label) = if s == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let ci = &input[center * dim..(center + 1) * dim];
                        let to = &output[target * dim..(target + 1) * dim];
                        let dot: f64 = ci.iter().zip(to).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for d in 0..dim {
                            grad[d] += g * output[target * dim + d];
                            output[target * dim + d] += g * input[center * dim + d];
                        }
                    }
                    for d in 0..dim {
                        input[center * dim + d] += grad[d];
                    }
                }
            }
        }
    }
    input
}

/// Full pipeline from a (directed) adjacency to unit-ball embeddings.
pub fn struc2vec_embed(adj: &AdjacencyMatrix, cfg: &Struc2vecConfig, exec: Execution) -> Result<LatentEmbedding> {
    let n = adj.len();
    if n == 0 {
        return Err(Error::Data("struc2vec needs a nonempty graph".into()));
    }
    cfg.validate()?;
    let diameter = hop_diameter(adj);
    let max_layer = match cfg.max_layer {
        None => diameter,
        Some(k) if k <= diameter => k,
        Some(k) => {
            return Err(Error::Config(format!(
                "struc2vec max_layer {k} exceeds graph diameter {diameter}"
            )))
        }
    };
    let seqs = ring_degree_sequences(adj, max_layer);
    let dist = StructuralDistances::compute(&seqs, exec);
    let walks = structural_walks(&dist, cfg, exec);
    let raw = skip_gram(&walks, n, cfg);
    rescale_to_unit_disk(cfg.dim, &raw)
}
