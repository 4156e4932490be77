//! PCCD on-disk dataset format.
//!
//! A dataset is a directory holding `meta.json` (geometry, record count and the
//! format tag `pccd-1`) and `data.bin`, a sequence of fixed-size little-endian
//! records:
//!
//! ```text
//! f64 timestamp | 3 x f64 position | u32 tx_index | Q x (f32 re, f32 im)
//! ```
//!
//! CSI entries are ordered `(b, m_r, m_c, n)` row-major. Values are stored in
//! single precision, so a round trip is exact for CSI that is already
//! representable as `f32`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dataset::{Datapoint, Dataset};
use super::geometry::ScenarioGeometry;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "pccd-1";
pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    #[serde(rename = "L")]
    len: usize,
    #[serde(flatten)]
    geometry: ScenarioGeometry,
}

fn record_size(q: usize) -> usize {
    8 + 24 + 4 + 8 * q
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let meta = Meta { format: FORMAT_TAG.to_string(), len: dataset.len(), geometry: dataset.geometry.clone() };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    fs::write(dir.join(META_FILE), json)?;

    let file = fs::File::create(dir.join(DATA_FILE))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    for dp in &dataset.datapoints {
        w.write_all(&dp.timestamp.to_le_bytes())?;
        for v in dp.position {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&dp.tx_index.to_le_bytes())?;
        for c in &dp.csi {
            w.write_all(&(c.re as f32).to_le_bytes())?;
            w.write_all(&(c.im as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_geometry(dir: &Path) -> Result<(ScenarioGeometry, usize)> {
    let text = fs::read(dir.join(META_FILE))?;
    let meta: Meta = serde_json::from_slice(&text).map_err(|e| Error::format(format!("{META_FILE}: {e}")))?;
    if meta.format != FORMAT_TAG {
        return Err(Error::format(format!("unsupported format tag {:?}, expected {FORMAT_TAG:?}", meta.format)));
    }
    meta.geometry.validate()?;
    Ok((meta.geometry, meta.len))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (geometry, len) = load_geometry(dir)?;
    let bytes = fs::read(dir.join(DATA_FILE))?;
    let q = geometry.csi_len();
    let rec = record_size(q);
    if bytes.len() != len * rec {
        return Err(Error::shape(format!(
            "{DATA_FILE} holds {} bytes, metadata implies {len} records of {rec} bytes",
            bytes.len()
        )));
    }
    let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let f32_at = |b: &[u8], o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    let datapoints = bytes
        .chunks_exact(rec)
        .map(|r| {
            let timestamp = f64_at(r, 0);
            let position = [f64_at(r, 8), f64_at(r, 16), f64_at(r, 24)];
            let tx_index = u32::from_le_bytes(r[32..36].try_into().unwrap());
            let csi =
                r[36..].chunks_exact(8).map(|c| Complex64::new(f32_at(c, 0) as f64, f32_at(c, 4) as f64)).collect();
            Datapoint { csi, position, timestamp, tx_index }
        })
        .collect();
    Dataset::new(geometry, datapoints)
}
