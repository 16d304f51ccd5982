use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::network::RoadNetwork;

/// All-pairs shortest-path distances, `+∞` where unreachable.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data("distance matrix must be square".into()));
        }
        let data = rows.concat();
        if data.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Data("distances must be nonnegative".into()));
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Finite off-diagonal entries.
    pub fn finite_off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n)
                .filter(move |&j| j != i)
                .map(move |j| self.get(i, j))
                .filter(|v| v.is_finite())
        })
    }
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over outgoing adjacency lists.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: source,
    });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adj[node] {
            let cand = d + w;
            if cand < dist[next] {
                dist[next] = cand;
                heap.push(Entry {
                    dist: cand,
                    node: next,
                });
            }
        }
    }
    dist
}

/// Exact directed shortest-path distances, one Dijkstra run per source.
pub fn all_pairs_shortest_paths(net: &RoadNetwork, exec: Execution) -> Result<DistanceMatrix> {
    if let Some(e) = net.edges().iter().find(|e| !(e.distance >= 0.0)) {
        return Err(Error::Data(format!("negative edge weight {}", e.distance)));
    }
    let adj = net.out_lists();
    let rows = exec.map_range(net.len(), |s| dijkstra(&adj, s));
    Ok(DistanceMatrix {
        n: net.len(),
        data: rows.concat(),
    })
}
