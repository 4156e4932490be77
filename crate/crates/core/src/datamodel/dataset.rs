use std::collections::BTreeMap;

use num_complex::Complex64;

use super::geometry::{ScenarioGeometry, Vec3};
use crate::error::{Error, Result};

/// CSI of one received Wi-Fi packet together with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Datapoint {
    /// Vectorized `B x M_r x M_c x N_sub` CSI array, row-major in `(b, m_r, m_c, n)`.
    pub csi: Vec<Complex64>,
    pub position: Vec3,
    pub timestamp: f64,
    /// One-based transmitter index.
    pub tx_index: u32,
}

impl Datapoint {
    /// Zero-based transmitter slot.
    pub fn tx_slot(&self) -> usize {
        self.tx_index as usize - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub geometry: ScenarioGeometry,
    pub datapoints: Vec<Datapoint>,
}

impl Dataset {
    /// Builds a dataset, sorting datapoints by timestamp (stable) and validating shapes.
    pub fn new(geometry: ScenarioGeometry, mut datapoints: Vec<Datapoint>) -> Result<Self> {
        geometry.validate()?;
        if !datapoints.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
            datapoints.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        let dataset = Self { geometry, datapoints };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.datapoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datapoints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.geometry.csi_len();
        for (l, dp) in self.datapoints.iter().enumerate() {
            if dp.csi.len() != q {
                return Err(Error::shape(format!("datapoint {l}: csi length {} != {q}", dp.csi.len())));
            }
            if !dp.timestamp.is_finite() {
                return Err(Error::invalid(format!("datapoint {l}: non-finite timestamp")));
            }
            if dp.tx_index < 1 || dp.tx_index as usize > self.geometry.num_tx {
                return Err(Error::invalid(format!(
                    "datapoint {l}: tx_index {} outside [1, {}]",
                    dp.tx_index, self.geometry.num_tx
                )));
            }
        }
        if !self.datapoints.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
            return Err(Error::invalid("datapoints are not sorted by timestamp"));
        }
        Ok(())
    }

    /// Indices of the datapoints sent by one-based transmitter `tx`.
    pub fn indices_for_tx(&self, tx: u32) -> Vec<usize> {
        self.datapoints.iter().enumerate().filter(|(_, dp)| dp.tx_index == tx).map(|(l, _)| l).collect()
    }
}

/// Datapoints that fall into one `delta_t` time window.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Absolute window index `floor(t / delta_t)`.
    pub window: i64,
    pub indices: Vec<usize>,
    pub mean_time: f64,
    pub mean_position: Vec3,
    /// Member indices split by transmitter; slot `i` holds transmitter `i + 1`.
    pub per_tx: Vec<Vec<usize>>,
}

impl Cluster {
    pub fn mean_xy(&self) -> [f64; 2] {
        [self.mean_position[0], self.mean_position[1]]
    }
}

/// Groups datapoints into absolute-time windows of length `delta_t`.
///
/// Windows are aligned to `t = 0`, so a datapoint at time `t` lands in window
/// `floor(t / delta_t)` regardless of where the recording starts.
pub fn cluster_datapoints(dataset: &Dataset, delta_t: f64) -> Result<Vec<Cluster>> {
    if !(delta_t > 0.0) || !delta_t.is_finite() {
        return Err(Error::invalid(format!("delta_t must be positive, got {delta_t}")));
    }
    let mut windows: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (l, dp) in dataset.datapoints.iter().enumerate() {
        let w = (dp.timestamp / delta_t).floor() as i64;
        windows.entry(w).or_default().push(l);
    }
    let num_tx = dataset.geometry.num_tx;
    Ok(windows
        .into_iter()
        .map(|(window, indices)| {
            let n = indices.len() as f64;
            let mut mean_time = 0.0;
            let mut mean_position = [0.0; 3];
            let mut per_tx = vec![Vec::new(); num_tx];
            for &l in &indices {
                let dp = &dataset.datapoints[l];
                mean_time += dp.timestamp;
                for k in 0..3 {
                    mean_position[k] += dp.position[k];
                }
                per_tx[dp.tx_slot()].push(l);
            }
            mean_time /= n;
            for v in &mut mean_position {
                *v /= n;
            }
            Cluster { window, indices, mean_time, mean_position, per_tx }
        })
        .collect())
}
