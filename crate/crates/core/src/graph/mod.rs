//! Distance and latent graph construction.

pub mod adjacency;
pub mod build;
pub mod dtw;
pub mod embedding;
pub mod hyperbolic;
pub mod kernel;
pub mod network;
pub mod shortest_path;
pub mod struc2vec;

pub use adjacency::{AdjacencyMatrix, GraphKind};
pub use dtw::dtw_cost;
pub use embedding::{rescale_to_unit_disk, LatentEmbedding};
pub use hyperbolic::hyperbolic_distance;
pub use kernel::{build_latent_graph, gaussian_threshold_adjacency, latent_distances, KernelConfig};
pub use network::{EdgeRecord, RoadNetwork, Sensor};
pub use shortest_path::{all_pairs_shortest_paths, DistanceMatrix};
pub use struc2vec::{struc2vec_embed, Struc2vecConfig};
pub use build::{build_graphs, BuiltGraphs, GraphBuildConfig, GraphsMeta};
