//! Delay-domain covariance features.
//!
//! Clutter-rejected CSI is moved to the delay domain per antenna, a window of
//! taps around the target echoes is kept, and each cluster is summarized by
//! one `M x M` spatial covariance (`M = M_r * M_c`) per transmitter, array and
//! tap. The real and imaginary parts of all blocks form the network input.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Cluster, Dataset, ScenarioGeometry};
use crate::error::{Error, Result};
use crate::io::{put_f32, put_u32, Reader};
use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapConfig {
    pub fft_length: usize,
    pub tap_start: usize,
    pub num_taps: usize,
}

impl TapConfig {
    /// Taps `[22, 34)` of an unpadded transform over the subcarriers.
    pub fn for_geometry(geometry: &ScenarioGeometry) -> Self {
        Self { fft_length: geometry.num_subcarriers, tap_start: 22, num_taps: 12 }
    }

    pub fn validate(&self, geometry: &ScenarioGeometry) -> Result<()> {
        if self.num_taps == 0 || self.tap_start + self.num_taps > self.fft_length {
            return Err(Error::invalid(format!(
                "tap window [{}, {}) does not fit a length-{} transform",
                self.tap_start,
                self.tap_start + self.num_taps,
                self.fft_length
            )));
        }
        if self.fft_length < geometry.num_subcarriers {
            return Err(Error::invalid(format!(
                "fft length {} is shorter than the {} subcarriers",
                self.fft_length, geometry.num_subcarriers
            )));
        }
        Ok(())
    }
}

/// Unitary delay transform of every antenna's subcarrier response, zero-padded
/// to `fft_length`: `x[k] = sum_n h[n] exp(+j 2 pi k n / N) / sqrt(N)`.
///
/// The positive exponent maps a path delay `tau` (subcarrier phase
/// `exp(-j 2 pi f_n tau)`) to a positive tap index. Output layout is
/// `(b, m_r, m_c, k)` with `fft_length` taps.
pub fn delay_transform(h: &[C64], geometry: &ScenarioGeometry, fft_length: usize) -> Result<Vec<C64>> {
    let n_sub = geometry.num_subcarriers;
    if h.len() != geometry.csi_len() {
        return Err(Error::shape(format!("csi length {} != {}", h.len(), geometry.csi_len())));
    }
    if fft_length < n_sub {
        return Err(Error::invalid(format!("fft length {fft_length} is shorter than {n_sub} subcarriers")));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(fft_length);
    let antennas = h.len() / n_sub;
    let mut out = vec![C64::new(0.0, 0.0); antennas * fft_length];
    for (src, dst) in h.chunks_exact(n_sub).zip(out.chunks_exact_mut(fft_length)) {
        dst[..n_sub].copy_from_slice(src);
        fft.process(dst);
    }
    let scale = 1.0 / (fft_length as f64).sqrt();
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(out)
}

/// Delay transform restricted to the configured tap window; layout `(b, m_r, m_c, t)`.
pub fn to_time_domain(h: &[C64], geometry: &ScenarioGeometry, cfg: &TapConfig) -> Result<Vec<C64>> {
    cfg.validate(geometry)?;
    let full = delay_transform(h, geometry, cfg.fft_length)?;
    Ok(full
        .chunks_exact(cfg.fft_length)
        .flat_map(|taps| taps[cfg.tap_start..cfg.tap_start + cfg.num_taps].iter().copied())
        .collect())
}

/// Length `2 * N_TX * B * N_tap * M^2` of a feature vector.
pub fn feature_len(geometry: &ScenarioGeometry, cfg: &TapConfig) -> usize {
    let m = geometry.antennas_per_array();
    2 * geometry.num_tx * geometry.num_arrays * cfg.num_taps * m * m
}

/// Covariance blocks `F[i_tx, b, t]` of one cluster, flattened in
/// `(i_tx, b, t, row, col)` order.
///
/// `members` pairs each member's one-based transmitter with its windowed
/// delay-domain CSI from [`to_time_domain`].
pub fn cluster_covariances(
    members: &[(u32, &[C64])],
    geometry: &ScenarioGeometry,
    cfg: &TapConfig,
) -> Result<Vec<C64>> {
    let m = geometry.antennas_per_array();
    let nb = geometry.num_arrays;
    let nt = cfg.num_taps;
    let block = m * m;
    let mut out = vec![C64::new(0.0, 0.0); geometry.num_tx * nb * nt * block];
    let mut snap = vec![C64::new(0.0, 0.0); m];
    for &(tx, x) in members {
        if tx < 1 || tx as usize > geometry.num_tx {
            return Err(Error::invalid(format!("tx index {tx} outside [1, {}]", geometry.num_tx)));
        }
        if x.len() != nb * m * nt {
            return Err(Error::shape(format!("time-domain csi length {} != {}", x.len(), nb * m * nt)));
        }
        let slot = tx as usize - 1;
        for b in 0..nb {
            for t in 0..nt {
                for (a, s) in snap.iter_mut().enumerate() {
                    *s = x[(b * m + a) * nt + t];
                }
                let base = ((slot * nb + b) * nt + t) * block;
                let f = &mut out[base..base + block];
                for i in 0..m {
                    for j in 0..m {
                        f[i * m + j] += snap[i] * snap[j].conj();
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub cluster_id: u32,
    pub values: Vec<f32>,
}

/// Real feature vector of one cluster: per block, the `M^2` real parts
/// followed by the `M^2` imaginary parts, blocks in `(i_tx, b, t)` order.
pub fn cluster_features(
    cluster_id: u32,
    members: &[(u32, &[C64])],
    geometry: &ScenarioGeometry,
    cfg: &TapConfig,
) -> Result<FeatureVector> {
    let cov = cluster_covariances(members, geometry, cfg)?;
    Ok(FeatureVector { cluster_id, values: flatten_blocks(&cov, geometry.antennas_per_array(), 1.0) })
}

fn flatten_blocks(cov: &[C64], m: usize, scale: f64) -> Vec<f32> {
    let block = m * m;
    let mut values = Vec::with_capacity(2 * cov.len());
    for f in cov.chunks_exact(block) {
        values.extend(f.iter().map(|c| (c.re * scale) as f32));
        values.extend(f.iter().map(|c| (c.im * scale) as f32));
    }
    values
}

const NORMALIZATION_EPS: f64 = 1e-12;

/// Features with every vector divided by the summed trace of its blocks.
pub fn normalized_cluster_features(
    cluster_id: u32,
    members: &[(u32, &[C64])],
    geometry: &ScenarioGeometry,
    cfg: &TapConfig,
) -> Result<FeatureVector> {
    let cov = cluster_covariances(members, geometry, cfg)?;
    let m = geometry.antennas_per_array();
    let trace: f64 = cov.chunks_exact(m * m).map(|f| (0..m).map(|i| f[i * m + i].re).sum::<f64>()).sum();
    let values = flatten_blocks(&cov, m, 1.0 / (trace + NORMALIZATION_EPS));
    Ok(FeatureVector { cluster_id, values })
}

/// Normalized features of every cluster of a clutter-rejected dataset; the
/// cluster id is its position in `clusters`.
pub fn dataset_features(clean: &Dataset, clusters: &[Cluster], cfg: &TapConfig) -> Result<Vec<FeatureVector>> {
    let g = &clean.geometry;
    cfg.validate(g)?;
    clusters
        .par_iter()
        .enumerate()
        .map(|(id, c)| {
            let td = c
                .indices
                .iter()
                .map(|&l| {
                    let dp = &clean.datapoints[l];
                    Ok((dp.tx_index, to_time_domain(&dp.csi, g, cfg)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let members: Vec<(u32, &[C64])> = td.iter().map(|(tx, x)| (*tx, x.as_slice())).collect();
            normalized_cluster_features(id as u32, &members, g, cfg)
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"PCCF";
/// Bumped whenever the element order inside a vector changes.
const VERSION: u32 = 1;

pub fn save_features(features: &[FeatureVector], path: &Path) -> Result<()> {
    let len = features.first().map_or(0, |f| f.values.len());
    if features.iter().any(|f| f.values.len() != len) {
        return Err(Error::shape("feature vectors differ in length"));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, len as u32)?;
    put_u32(&mut w, features.len() as u32)?;
    for f in features {
        put_u32(&mut w, f.cluster_id)?;
        for &v in &f.values {
            put_f32(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "feature file");
    r.magic(MAGIC, VERSION)?;
    let len = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let cluster_id = r.u32()?;
        let values = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        out.push(FeatureVector { cluster_id, values });
    }
    r.finish()?;
    Ok(out)
}
