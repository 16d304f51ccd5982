use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    /// Raw road edges, before any kernel.
    Road,
    Distance,
    Latent,
}

/// Binary `N×N` graph with an all-zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<f64>,
    kind: GraphKind,
}

impl AdjacencyMatrix {
    pub fn new(n: usize, data: Vec<f64>, kind: GraphKind) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Data(format!("adjacency needs {} entries, got {}", n * n, data.len())));
        }
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("adjacency entries must be 0 or 1".into()));
        }
        if (0..n).any(|i| data[i * n + i] != 0.0) {
            return Err(Error::Data("adjacency diagonal must be zero".into()));
        }
        Ok(Self { n, data, kind })
    }

    pub fn from_fn(n: usize, kind: GraphKind, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i != j && f(i, j) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self { n, data, kind }
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != 0.0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn edge_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Neighbour lists of the undirected view (edge if either direction exists).
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| j != i && (self.has_edge(i, j) || self.has_edge(j, i)))
                    .collect()
            })
            .collect()
    }

    /// `N` rows of `N` comma-separated 0/1 values, no header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path.as_ref(), self.n, &self.data)
    }

    pub fn read_csv(path: impl AsRef<Path>, kind: GraphKind) -> Result<Self> {
        let rows = read_matrix_csv(path.as_ref())?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data(format!("{} is not square", path.as_ref().display())));
        }
        Self::new(n, rows.concat(), kind)
    }
}

pub(crate) fn write_matrix_csv(path: &Path, cols: usize, data: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in data.chunks(cols.max(1)) {
        w.write_record(row.iter().map(|v| format_cell(*v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_cell(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub(crate) fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.iter()
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::Data(format!("{}: bad numeric cell `{cell}`", path.display()))
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_entries() {
        assert!(AdjacencyMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0], GraphKind::Road).is_ok());
        assert!(AdjacencyMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0], GraphKind::Road).is_err());
        assert!(AdjacencyMatrix::new(2, vec![0.0, 0.5, 1.0, 0.0], GraphKind::Road).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let a = AdjacencyMatrix::from_fn(3, GraphKind::Distance, |i, j| i < j);
        a.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0,1,1\n0,0,1\n0,0,0\n");
        assert_eq!(AdjacencyMatrix::read_csv(&p, GraphKind::Distance).unwrap(), a);
    }
}
