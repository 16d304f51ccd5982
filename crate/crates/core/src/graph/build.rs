//! End-to-end construction of both graphs and their region tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::sha256_json;
use crate::dmgcn::GraphSet;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::adjacency::{AdjacencyMatrix, GraphKind};
use crate::graph::embedding::LatentEmbedding;
use crate::graph::kernel::{gaussian_threshold_adjacency, latent_distances, KernelConfig};
use crate::graph::network::RoadNetwork;
use crate::graph::shortest_path::all_pairs_shortest_paths;
use crate::graph::struc2vec::{struc2vec_embed, Struc2vecConfig};
use crate::region::{partition_by_quadrant, validate_partition, PositionTable, RegionTensor, REGION_CONVENTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuildConfig {
    pub epsilon_distance: f64,
    pub epsilon_latent: f64,
    /// Kernel scale; `None` uses the standard deviation of the finite off-diagonal distances.
    pub delta_distance: Option<f64>,
    pub delta_latent: Option<f64>,
    pub struc2vec: Struc2vecConfig,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            epsilon_distance: 0.1,
            epsilon_latent: 0.5,
            delta_distance: None,
            delta_latent: None,
            struc2vec: Struc2vecConfig::default(),
        }
    }
}

/// Sidecar stored next to the emitted graph files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphsMeta {
    pub sensor_ids: Vec<String>,
    pub distance_kernel: KernelConfig,
    pub latent_kernel: KernelConfig,
    pub seed: u64,
    pub config_hash: String,
    pub graph_hash: String,
    pub region_convention: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltGraphs {
    pub sensor_ids: Vec<String>,
    pub distance: AdjacencyMatrix,
    pub latent: AdjacencyMatrix,
    pub embedding: LatentEmbedding,
    pub distance_regions: RegionTensor,
    pub latent_regions: RegionTensor,
    pub distance_kernel: KernelConfig,
    pub latent_kernel: KernelConfig,
    pub seed: u64,
}

pub const GRAPHS_META: &str = "graphs.json";

pub fn build_graphs(net: &RoadNetwork, cfg: &GraphBuildConfig, exec: Execution) -> Result<BuiltGraphs> {
    let n = net.len();
    let spd = all_pairs_shortest_paths(net, exec)?;
    let distance_kernel = KernelConfig::new(
        cfg.delta_distance.unwrap_or_else(|| KernelConfig::std_delta(spd.finite_off_diagonal())),
        cfg.epsilon_distance,
    )?;
    let distance = gaussian_threshold_adjacency(&spd, &distance_kernel)?;

    let mut road = vec![0.0; n * n];
    for e in net.edges() {
        if e.from != e.to {
            road[e.from * n + e.to] = 1.0;
        }
    }
    let road = AdjacencyMatrix::new(n, road, GraphKind::Road)?;
    let embedding = struc2vec_embed(&road, &cfg.struc2vec, exec)?;
    let hyp = latent_distances(&embedding)?;
    let latent_kernel = KernelConfig::new(
        cfg.delta_latent.unwrap_or_else(|| KernelConfig::std_delta(hyp.finite_off_diagonal())),
        cfg.epsilon_latent,
    )?;
    let latent = AdjacencyMatrix::from_fn(n, GraphKind::Latent, |i, j| latent_kernel.connects(hyp.get(i, j)));

    let geo = PositionTable::from_points(&net.positions())?;
    let distance_regions = partition_by_quadrant(distance.data(), n, &geo, GraphKind::Distance)?;
    let lat = PositionTable::new(embedding.dim(), embedding.data().to_vec())?;
    let latent_regions = partition_by_quadrant(latent.data(), n, &lat, GraphKind::Latent)?;
    Ok(BuiltGraphs {
        sensor_ids: net.sensor_ids(),
        distance,
        latent,
        embedding,
        distance_regions,
        latent_regions,
        distance_kernel,
        latent_kernel,
        seed: cfg.struc2vec.seed,
    })
}

#[derive(Serialize)]
struct HashView<'a> {
    sensor_ids: &'a [String],
    distance: &'a [f64],
    latent: &'a [f64],
    embedding: &'a [f64],
    distance_regions: &'a [f64],
    latent_regions: &'a [f64],
}

impl BuiltGraphs {
    /// Digest of everything a trained model depends on.
    pub fn hash(&self) -> String {
        sha256_json(&HashView {
            sensor_ids: &self.sensor_ids,
            distance: self.distance.data(),
            latent: self.latent.data(),
            embedding: self.embedding.data(),
            distance_regions: self.distance_regions.data(),
            latent_regions: self.latent_regions.data(),
        })
    }

    pub fn graph_set(&self, use_latent: bool) -> GraphSet {
        GraphSet {
            distance: self.distance_regions.clone(),
            latent: use_latent.then(|| self.latent_regions.clone()),
        }
    }

    pub fn meta(&self, config_hash: &str) -> GraphsMeta {
        GraphsMeta {
            sensor_ids: self.sensor_ids.clone(),
            distance_kernel: self.distance_kernel,
            latent_kernel: self.latent_kernel,
            seed: self.seed,
            config_hash: config_hash.to_string(),
            graph_hash: self.hash(),
            region_convention: REGION_CONVENTION.to_string(),
        }
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>, config_hash: &str) -> Result<GraphsMeta> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.distance.write_csv(dir.join("adj_distance.csv"))?;
        self.latent.write_csv(dir.join("adj_latent.csv"))?;
        self.embedding.write_csv(dir.join("embeddings.csv"), &self.sensor_ids)?;
        self.distance_regions.write(
            dir.join("regions_distance.csv"),
            dir.join("regions_distance.json"),
            &self.sensor_ids,
        )?;
        self.latent_regions
            .write(dir.join("regions_latent.csv"), dir.join("regions_latent.json"), &self.sensor_ids)?;
        let meta = self.meta(config_hash);
        let path = dir.join(GRAPHS_META);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        Ok(meta)
    }

    /// Loads a graph directory, checking consistency and the recorded hash.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<(Self, GraphsMeta)> {
        let dir = dir.as_ref();
        let path = dir.join(GRAPHS_META);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: GraphsMeta = serde_json::from_str(&text)?;
        let distance = AdjacencyMatrix::read_csv(dir.join("adj_distance.csv"), GraphKind::Distance)?;
        let latent = AdjacencyMatrix::read_csv(dir.join("adj_latent.csv"), GraphKind::Latent)?;
        let (ids, embedding) = LatentEmbedding::read_csv(dir.join("embeddings.csv"))?;
        let (_, distance_regions) = RegionTensor::read(dir.join("regions_distance.csv"), dir.join("regions_distance.json"))?;
        let (_, latent_regions) = RegionTensor::read(dir.join("regions_latent.csv"), dir.join("regions_latent.json"))?;
        let n = meta.sensor_ids.len();
        if ids != meta.sensor_ids || distance.len() != n || latent.len() != n {
            return Err(Error::Data(format!("{}: graph files disagree on the sensor set", dir.display())));
        }
        if !validate_partition(&distance_regions, distance.data()) || !validate_partition(&latent_regions, latent.data()) {
            return Err(Error::Data(format!("{}: region tensors do not partition their graphs", dir.display())));
        }
        let graphs = Self {
            sensor_ids: ids,
            distance,
            latent,
            embedding,
            distance_regions,
            latent_regions,
            distance_kernel: meta.distance_kernel,
            latent_kernel: meta.latent_kernel,
            seed: meta.seed,
        };
        if graphs.hash() != meta.graph_hash {
            return Err(Error::Data(format!(
                "{}: graph hash {} does not match recorded {}",
                dir.display(),
                graphs.hash(),
                meta.graph_hash
            )));
        }
        Ok((graphs, meta))
    }
}
