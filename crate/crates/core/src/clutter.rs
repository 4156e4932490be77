//! Clutter acquisition and removal by subspace projection.
//!
//! For every transmitter, the dominant eigenvectors of the CSI autocovariance
//! span the static clutter. Each CSI vector is cleaned by subtracting its
//! projection onto that subspace.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Datapoint, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{gram_of_rows, hermitian_top_eigen, C64};

const GRAM_BATCH: usize = 512;

/// `R = sum_l h_l h_l^H` over equally long vectors; an empty list gives the
/// zero `q x q` matrix.
///
/// Vectors are reduced in fixed batches whose partial sums are added in batch
/// order, so the result does not depend on the thread count.
pub fn accumulate_autocovariance(vectors: &[&[C64]], q: usize) -> Result<Array2<C64>> {
    if let Some((l, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != q) {
        return Err(Error::shape(format!("vector {l} has length {}, expected {q}", v.len())));
    }
    let partials: Vec<Array2<C64>> = vectors
        .par_chunks(GRAM_BATCH)
        .map(|batch| {
            let re = Array2::from_shape_fn((batch.len(), q), |(l, i)| batch[l][i].re);
            let im = Array2::from_shape_fn((batch.len(), q), |(l, i)| batch[l][i].im);
            gram_of_rows(&re, &im)
        })
        .collect();
    let mut r = Array2::from_elem((q, q), C64::new(0.0, 0.0));
    for p in &partials {
        r += p;
    }
    Ok(r)
}

/// Orthonormal basis `C` (`Q x K`) of one transmitter's clutter subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct ClutterSubspace {
    pub basis: Array2<C64>,
    /// Retained eigenvalues, descending and nonnegative.
    pub eigenvalues: Vec<f64>,
}

impl ClutterSubspace {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    /// `C^H h`.
    fn coefficients(&self, h: &[C64]) -> Vec<C64> {
        self.basis.columns().into_iter().map(|c| c.iter().zip(h).map(|(a, b)| a.conj() * b).sum()).collect()
    }
}

fn check_square_finite(r: ArrayView2<C64>) -> Result<usize> {
    let q = r.nrows();
    if r.ncols() != q {
        return Err(Error::shape(format!("autocovariance is {}x{}, expected square", q, r.ncols())));
    }
    if r.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::invalid("autocovariance has non-finite entries"));
    }
    Ok(q)
}

/// Unit eigenvectors of the `k` largest eigenvalues of `r`.
pub fn estimate_clutter_subspace(r: ArrayView2<C64>, k: usize) -> Result<ClutterSubspace> {
    let q = check_square_finite(r)?;
    if k == 0 || k > q {
        return Err(Error::invalid(format!("clutter order {k} outside [1, {q}]")));
    }
    let eig = hermitian_top_eigen(r, k, k)?;
    Ok(ClutterSubspace { basis: eig.vectors, eigenvalues: eig.values.iter().map(|v| v.max(0.0)).collect() })
}

/// Smallest `K` in `1..=k_max` maximizing `lambda_K / lambda_{K+1}`.
///
/// `eigenvalues` must be sorted descending and hold at least `k_max + 1`
/// entries. A numerically vanishing `lambda_{K+1}` counts as an infinite gap.
pub fn select_clutter_order(eigenvalues: &[f64], k_max: usize) -> Result<usize> {
    if k_max == 0 || eigenvalues.len() < k_max + 1 {
        return Err(Error::invalid(format!(
            "eigen-gap rule needs k_max >= 1 and k_max + 1 eigenvalues, got k_max={k_max} with {}",
            eigenvalues.len()
        )));
    }
    let top = eigenvalues[0].max(0.0);
    if top == 0.0 {
        return Ok(1);
    }
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_max {
        let next = eigenvalues[k].max(0.0);
        let ratio = if next <= 1e-15 * top { f64::INFINITY } else { eigenvalues[k - 1] / next };
        if ratio > best.1 {
            best = (k, ratio);
        }
        if ratio == f64::INFINITY {
            break;
        }
    }
    Ok(best.0)
}

/// `h - C (C^H h)`.
pub fn remove_clutter(h: &[C64], subspace: &ClutterSubspace) -> Result<Vec<C64>> {
    if h.len() != subspace.dim() {
        return Err(Error::shape(format!(
            "csi length {} does not match clutter dimension {}",
            h.len(),
            subspace.dim()
        )));
    }
    let coeff = subspace.coefficients(h);
    let mut out = h.to_vec();
    for (col, a) in subspace.basis.columns().into_iter().zip(&coeff) {
        for (o, c) in out.iter_mut().zip(col.iter()) {
            *o -= c * a;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClutterOrder {
    Fixed(usize),
    /// Eigen-gap rule searching `1..=max`.
    EigenGap {
        max: usize,
    },
}

impl Default for ClutterOrder {
    fn default() -> Self {
        ClutterOrder::EigenGap { max: 16 }
    }
}

/// Clutter subspaces for every transmitter; slot `i` serves transmitter `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClutterModel {
    pub per_tx: Vec<Option<ClutterSubspace>>,
}

impl ClutterModel {
    /// Estimates one subspace per transmitter present in `dataset`.
    pub fn fit(dataset: &Dataset, order: ClutterOrder) -> Result<Self> {
        let q = dataset.geometry.csi_len();
        let mut per_tx = Vec::with_capacity(dataset.geometry.num_tx);
        for tx in 1..=dataset.geometry.num_tx as u32 {
            let idx = dataset.indices_for_tx(tx);
            if idx.is_empty() {
                per_tx.push(None);
                continue;
            }
            let vectors: Vec<&[C64]> = idx.iter().map(|&l| dataset.datapoints[l].csi.as_slice()).collect();
            let r = accumulate_autocovariance(&vectors, q)?;
            let subspace = match order {
                ClutterOrder::Fixed(k) => {
                    if k == 0 {
                        return Err(Error::invalid("clutter order must be at least 1"));
                    }
                    if idx.len() < k {
                        return Err(Error::invalid(format!(
                            "transmitter {tx} has {} datapoints, fewer than clutter order {k}",
                            idx.len()
                        )));
                    }
                    estimate_clutter_subspace(r.view(), k)?
                }
                ClutterOrder::EigenGap { max } => {
                    let max = max.min(q - 1).min(idx.len());
                    if max == 0 {
                        return Err(Error::invalid(format!("transmitter {tx}: no room for the eigen-gap rule")));
                    }
                    let probe = hermitian_top_eigen(r.view(), max + 1, 0)?;
                    let k = select_clutter_order(&probe.values, max)?;
                    log::info!("transmitter {tx}: eigen-gap clutter order {k}");
                    estimate_clutter_subspace(r.view(), k)?
                }
            };
            per_tx.push(Some(subspace));
        }
        Ok(Self { per_tx })
    }

    pub fn orders(&self) -> Vec<usize> {
        self.per_tx.iter().map(|s| s.as_ref().map_or(0, |s| s.order())).collect()
    }

    pub fn subspace(&self, tx: u32) -> Result<&ClutterSubspace> {
        self.per_tx
            .get((tx as usize).wrapping_sub(1))
            .and_then(|s| s.as_ref())
            .ok_or_else(|| Error::invalid(format!("no clutter model for transmitter {tx}")))
    }

    /// Projects every datapoint onto the complement of its transmitter's clutter subspace.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let datapoints = dataset
            .datapoints
            .par_iter()
            .map(|dp| Ok(Datapoint { csi: remove_clutter(&dp.csi, self.subspace(dp.tx_index)?)?, ..dp.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { geometry: dataset.geometry.clone(), datapoints })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.per_tx.len() as u32).to_le_bytes())?;
        for s in &self.per_tx {
            match s {
                None => w.write_all(&[0])?,
                Some(s) => {
                    w.write_all(&[1])?;
                    w.write_all(&(s.dim() as u32).to_le_bytes())?;
                    w.write_all(&(s.order() as u32).to_le_bytes())?;
                    for v in &s.eigenvalues {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    for col in s.basis.columns() {
                        for c in col {
                            w.write_all(&c.re.to_le_bytes())?;
                            w.write_all(&c.im.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = crate::io::Reader::new(&bytes, "clutter model");
        r.magic(MAGIC, VERSION)?;
        let n = r.u32()? as usize;
        let mut per_tx = Vec::with_capacity(n);
        for _ in 0..n {
            if r.u8()? == 0 {
                per_tx.push(None);
                continue;
            }
            let q = r.u32()? as usize;
            let k = r.u32()? as usize;
            let eigenvalues = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let mut basis = Array2::from_elem((q, k), C64::new(0.0, 0.0));
            for j in 0..k {
                for i in 0..q {
                    basis[(i, j)] = C64::new(r.f64()?, r.f64()?);
                }
            }
            per_tx.push(Some(ClutterSubspace { basis, eigenvalues }));
        }
        r.finish()?;
        Ok(Self { per_tx })
    }
}

const MAGIC: &[u8; 4] = b"PCCC";
const VERSION: u32 = 1;

/// Fits a fixed-order clutter model on `dataset` and removes it from the same data.
pub fn apply_crap(dataset: &Dataset, k: usize) -> Result<Dataset> {
    ClutterModel::fit(dataset, ClutterOrder::Fixed(k))?.apply(dataset)
}
