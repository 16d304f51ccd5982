use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    #[serde(rename = "sensor_id")]
    pub id: String,
    pub longitude: f64,
    pub latitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: String,
    pub to: String,
    pub distance: f64,
}

/// Directed edge between sensor indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub distance: f64,
}

/// Sensors with planar coordinates plus directed, nonnegatively weighted edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    sensors: Vec<Sensor>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
}

impl RoadNetwork {
    pub fn new(sensors: Vec<Sensor>, edges: &[EdgeRecord]) -> Result<Self> {
        let mut index = HashMap::with_capacity(sensors.len());
        for (i, s) in sensors.iter().enumerate() {
            if !(s.longitude.is_finite() && s.latitude.is_finite()) {
                return Err(Error::Data(format!("sensor `{}` has non-finite coordinates", s.id)));
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate sensor id `{}`", s.id)));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("edge references unknown sensor `{id}`")))
        };
        let edges = edges
            .iter()
            .map(|e| {
                if !e.distance.is_finite() || e.distance < 0.0 {
                    return Err(Error::Data(format!(
                        "edge {} -> {} has invalid distance {}",
                        e.from, e.to, e.distance
                    )));
                }
                Ok(Edge {
                    from: lookup(&e.from)?,
                    to: lookup(&e.to)?,
                    distance: e.distance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sensors,
            edges,
            index,
        })
    }

    /// Reads `sensor_id,longitude,latitude` and `from,to,distance` CSV files.
    pub fn from_csv(sensors: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<Self> {
        let sensors = read_csv::<Sensor>(sensors.as_ref())?;
        let edges = read_csv::<EdgeRecord>(edges.as_ref())?;
        Self::new(sensors, &edges)
    }

    pub fn write_csv(&self, sensors: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(sensors.as_ref())?;
        for s in &self.sensors {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(sensors.as_ref(), e))?;
        let mut w = csv::Writer::from_path(edges.as_ref())?;
        for e in &self.edges {
            w.serialize(EdgeRecord {
                from: self.sensors[e.from].id.clone(),
                to: self.sensors[e.to].id.clone(),
                distance: e.distance,
            })?;
        }
        w.flush().map_err(|e| Error::io(edges.as_ref(), e))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.id.clone()).collect()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `(longitude, latitude)` per sensor, row-major `N×2`.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.sensors.iter().map(|s| [s.longitude, s.latitude]).collect()
    }

    /// Outgoing adjacency lists `(target, distance)`.
    pub fn out_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut lists = vec![Vec::new(); self.len()];
        for e in &self.edges {
            lists[e.from].push((e.to, e.distance));
        }
        lists
    }
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
