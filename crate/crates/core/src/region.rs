//! Per-sensor split of neighbours into sign quadrants of relative position.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::adjacency::{read_matrix_csv, write_matrix_csv};
use crate::graph::GraphKind;

/// Human-readable description written next to serialized region tensors.
pub const REGION_CONVENTION: &str = "region = sum_k 2^(r-1-k) * [pos[j][k] - pos[i][k] < 0]; \
     for 2-D positions (++, +-, -+, --) -> (0, 1, 2, 3); zero differences count as nonnegative";

/// `N × r` coordinates used to orient neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    dim: usize,
    data: Vec<f64>,
}

impl PositionTable {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Data("position table is not a whole number of rows".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("position table"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Region index of `to` as seen from `from`.
    pub fn region_of(&self, from: usize, to: usize) -> usize {
        self.row(to)
            .iter()
            .zip(self.row(from))
            .fold(0, |acc, (b, a)| (acc << 1) | usize::from(b - a < 0.0))
    }
}

/// `R × N × N` split of an adjacency, one slice per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionTensorRepr")]
pub struct RegionTensor {
    regions: usize,
    n: usize,
    data: Vec<f64>,
    kind: GraphKind,
}

#[derive(Deserialize)]
struct RegionTensorRepr {
    regions: usize,
    n: usize,
    data: Vec<f64>,
    kind: GraphKind,
}

impl TryFrom<RegionTensorRepr> for RegionTensor {
    type Error = Error;

    fn try_from(r: RegionTensorRepr) -> Result<Self> {
        RegionTensor::new(r.regions, r.n, r.data, r.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionHeader {
    pub convention: String,
    pub label: GraphKind,
    pub regions: usize,
    pub n: usize,
    pub sensor_ids: Vec<String>,
}

impl RegionTensor {
    pub fn new(regions: usize, n: usize, data: Vec<f64>, kind: GraphKind) -> Result<Self> {
        if data.len() != regions * n * n {
            return Err(Error::shape("region tensor", &[regions, n, n], &[data.len()]));
        }
        Ok(Self {
            regions,
            n,
            data,
            kind,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn slice(&self, r: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.data[r * nn..(r + 1) * nn]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise sum over the region axis.
    pub fn collapse(&self) -> Vec<f64> {
        let nn = self.n * self.n;
        (0..nn)
            .map(|idx| (0..self.regions).map(|r| self.data[r * nn + idx]).sum())
            .collect()
    }

    /// Same support collapsed into a single region.
    pub fn merged(&self) -> RegionTensor {
        RegionTensor {
            regions: 1,
            n: self.n,
            data: self.collapse(),
            kind: self.kind,
        }
    }

    /// Relabels sensors: new index `i` takes old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> RegionTensor {
        let n = self.n;
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.regions {
            for i in 0..n {
                for j in 0..n {
                    data[(r * n + i) * n + j] = self.data[(r * n + perm[i]) * n + perm[j]];
                }
            }
        }
        RegionTensor { data, ..self.clone() }
    }

    /// Four (or `R`) stacked `N×N` CSV blocks plus a JSON header beside them.
    pub fn write(&self, csv_path: impl AsRef<Path>, header_path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        write_matrix_csv(csv_path.as_ref(), self.n, &self.data)?;
        let header = RegionHeader {
            convention: REGION_CONVENTION.into(),
            label: self.kind,
            regions: self.regions,
            n: self.n,
            sensor_ids: ids.to_vec(),
        };
        let json = serde_json::to_string_pretty(&header)?;
        std::fs::write(header_path.as_ref(), json).map_err(|e| Error::io(header_path.as_ref(), e))
    }

    pub fn read(csv_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<(RegionHeader, Self)> {
        let text = std::fs::read_to_string(header_path.as_ref())
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", header_path.as_ref().display())))?;
        let header: RegionHeader = serde_json::from_str(&text)?;
        let rows = read_matrix_csv(csv_path.as_ref())?;
        if rows.len() != header.regions * header.n || rows.iter().any(|r| r.len() != header.n) {
            return Err(Error::Data(format!(
                "{} does not hold {} blocks of {}x{}",
                csv_path.as_ref().display(),
                header.regions,
                header.n,
                header.n
            )));
        }
        let t = Self::new(header.regions, header.n, rows.concat(), header.label)?;
        Ok((header, t))
    }
}

/// Copies each nonzero `A[i][j]` into the slice of the region `pos[j] - pos[i]` falls in.
pub fn partition_by_quadrant(a: &[f64], n: usize, pos: &PositionTable, kind: GraphKind) -> Result<RegionTensor> {
    if a.len() != n * n || pos.len() != n {
        return Err(Error::shape("partition_by_quadrant", &[a.len()], &[n * n, pos.len()]));
    }
    if let Some(i) = (0..n).find(|&i| a[i * n + i] != 0.0) {
        return Err(Error::Data(format!("adjacency has a nonzero diagonal at {i}")));
    }
    let regions = 1usize << pos.dim();
    let mut data = vec![0.0; regions * n * n];
    for i in 0..n {
        for j in 0..n {
            let v = a[i * n + j];
            if v != 0.0 {
                let r = pos.region_of(i, j);
                data[(r * n + i) * n + j] = v;
            }
        }
    }
    RegionTensor::new(regions, n, data, kind)
}

/// True iff the slices sum to `a` exactly, have disjoint supports and zero diagonals.
pub fn validate_partition(r: &RegionTensor, a: &[f64]) -> bool {
    let n = r.n;
    if a.len() != n * n {
        return false;
    }
    let nn = n * n;
    (0..nn).all(|idx| {
        let nonzero = (0..r.regions).filter(|&k| r.data[k * nn + idx] != 0.0).count();
        let sum: f64 = (0..r.regions).map(|k| r.data[k * nn + idx]).sum();
        let diagonal = idx / n == idx % n;
        nonzero <= 1 && sum == a[idx] && !(diagonal && nonzero > 0)
    })
}
