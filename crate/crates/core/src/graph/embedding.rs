use std::path::Path;

use crate::error::{Error, Result};

/// Headroom applied when squeezing raw embeddings into the open unit ball.
pub const DISK_HEADROOM: f64 = 1.05;

/// One embedding row per sensor, every row strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEmbedding {
    dim: usize,
    data: Vec<f64>,
}

impl LatentEmbedding {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Data(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        let e = Self { dim, data };
        for i in 0..e.len() {
            let norm: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm < 1.0) {
                return Err(Error::Data(format!("embedding row {i} has norm {norm} >= 1")));
            }
        }
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `sensor_id,e0,e1,...`
    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        if ids.len() != self.len() {
            return Err(Error::Data("embedding/sensor count mismatch".into()));
        }
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["sensor_id".to_string()];
        header.extend((0..self.dim).map(|k| format!("e{k}")));
        w.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Self)> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let dim = r.headers()?.len().saturating_sub(1);
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for cell in rec.iter().skip(1) {
                data.push(cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!("bad embedding value `{cell}`"))
                })?);
            }
        }
        Ok((ids, Self::new(dim, data)?))
    }
}

/// Divides every row by `max row norm × 1.05`; an all-zero input is returned unchanged.
pub fn rescale_to_unit_disk(dim: usize, raw: &[f64]) -> Result<LatentEmbedding> {
    if dim == 0 || !raw.len().is_multiple_of(dim) {
        return Err(Error::Data("raw embedding is not a whole number of rows".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rescale_to_unit_disk"));
    }
    let max_norm = raw
        .chunks(dim)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_norm == 0.0 {
        return LatentEmbedding::new(dim, raw.to_vec());
    }
    let scale = max_norm * DISK_HEADROOM;
    LatentEmbedding::new(dim, raw.iter().map(|v| v / scale).collect())
}
