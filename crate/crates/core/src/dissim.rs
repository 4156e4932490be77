//! CSI dissimilarities between clusters.
//!
//! Each cluster is condensed to one principal spatial snapshot per array.
//! Snapshot pairs give a cosine dissimilarity, which is fused with timestamp
//! differences, completed to geodesic distances over a k-nearest-neighbor
//! graph and optionally scaled to metres.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::ScenarioGeometry;
use crate::error::{Error, Result};
use crate::io::{put_f32, put_u32, Reader};
use crate::linalg::{hermitian_eigen, C64};
use crate::stats::{median, sample_pairs};

/// Principal per-array snapshot of a cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedCsi {
    /// One vectorized `M_r x M_c` slice per array, row-major.
    pub slices: Vec<Vec<C64>>,
    /// Arrays whose cluster CSI was identically zero.
    pub zero_arrays: Vec<bool>,
}

/// Condenses a cluster's clutter-rejected CSI to one `M_r x M_c` snapshot per
/// array: the principal eigenvector of the spatial covariance over all members
/// and subcarriers, scaled by the square root of its eigenvalue, with the
/// largest-magnitude entry rotated to the positive real axis.
pub fn combine_cluster_csi(members: &[&[C64]], geometry: &ScenarioGeometry) -> Result<CombinedCsi> {
    if members.is_empty() {
        return Err(Error::invalid("cannot combine an empty cluster"));
    }
    let m = geometry.antennas_per_array();
    let n_sub = geometry.num_subcarriers;
    let mut slices = Vec::with_capacity(geometry.num_arrays);
    let mut zero_arrays = Vec::with_capacity(geometry.num_arrays);
    for b in 0..geometry.num_arrays {
        let mut r = Array2::from_elem((m, m), C64::new(0.0, 0.0));
        for h in members {
            if h.len() != geometry.csi_len() {
                return Err(Error::shape(format!("csi length {} != {}", h.len(), geometry.csi_len())));
            }
            let base = b * m * n_sub;
            for n in 0..n_sub {
                for i in 0..m {
                    let hi = h[base + i * n_sub + n];
                    for j in i..m {
                        r[(i, j)] += hi * h[base + j * n_sub + n].conj();
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                r[(i, j)] = r[(j, i)].conj();
            }
        }
        if r.iter().all(|c| c.norm() == 0.0) {
            log::warn!("array {b}: cluster CSI is zero");
            slices.push(vec![C64::new(0.0, 0.0); m]);
            zero_arrays.push(true);
            continue;
        }
        let eig = hermitian_eigen(r.view())?;
        let v = eig.vectors.column(0);
        let peak = (0..m).fold(0, |best, i| if v[i].norm() > v[best].norm() { i } else { best });
        let phase = v[peak].conj() / v[peak].norm();
        let scale = eig.values[0].max(0.0).sqrt();
        slices.push(v.iter().map(|x| x * phase * scale).collect());
        zero_arrays.push(false);
    }
    Ok(CombinedCsi { slices, zero_arrays })
}

fn energy(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

/// `B - sum_b |<H_i,b, H_j,b>|^2 / (||H_i,b||^2 ||H_j,b||^2)`.
///
/// Each array compares the two snapshots as whole vectors, so a pair of
/// identical snapshots always has dissimilarity zero. An array with a zero
/// snapshot on either side contributes 1.
pub fn cosine_dissimilarity(a: &CombinedCsi, b: &CombinedCsi) -> f64 {
    a.slices
        .iter()
        .zip(&b.slices)
        .map(|(x, y)| {
            let (ex, ey) = (energy(x), energy(y));
            if ex == 0.0 || ey == 0.0 {
                return 1.0;
            }
            let inner: C64 = x.iter().zip(y).map(|(p, q)| p.conj() * q).sum();
            (1.0 - inner.norm_sqr() / (ex * ey)).clamp(0.0, 1.0)
        })
        .sum()
}

/// Entry-by-entry variant `B - sum_b sum_m |x_m^* y_m|^2 / (||x||^2 ||y||^2)`,
/// which ignores relative phases between antennas.
pub fn entrywise_cosine_dissimilarity(a: &CombinedCsi, b: &CombinedCsi) -> f64 {
    a.slices
        .iter()
        .zip(&b.slices)
        .map(|(x, y)| {
            let (ex, ey) = (energy(x), energy(y));
            if ex == 0.0 || ey == 0.0 {
                return 1.0;
            }
            let s: f64 = x.iter().zip(y).map(|(p, q)| (p.conj() * q).norm_sqr()).sum();
            (1.0 - s / (ex * ey)).clamp(0.0, 1.0)
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CosineForm {
    Coherent,
    Entrywise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DissimilarityKind {
    Cs,
    CsFuse,
    CsFuseGeo,
    ScaledMeters,
}

impl DissimilarityKind {
    fn tag(self) -> u32 {
        match self {
            Self::Cs => 0,
            Self::CsFuse => 1,
            Self::CsFuseGeo => 2,
            Self::ScaledMeters => 3,
        }
    }

    fn from_tag(t: u32) -> Result<Self> {
        Ok(match t {
            0 => Self::Cs,
            1 => Self::CsFuse,
            2 => Self::CsFuseGeo,
            3 => Self::ScaledMeters,
            _ => return Err(Error::format(format!("unknown dissimilarity kind {t}"))),
        })
    }
}

/// Square, symmetric, nonnegative matrix over clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    pub kind: DissimilarityKind,
    pub n: usize,
    /// Row-major `n x n` values.
    pub values: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn from_fn(kind: DissimilarityKind, n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate().skip(i + 1) {
                *v = f(i, j);
            }
        });
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
        Self { kind, n, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Pairwise cosine dissimilarities with a zero diagonal.
pub fn cosine_matrix(combined: &[CombinedCsi], form: CosineForm) -> DissimilarityMatrix {
    DissimilarityMatrix::from_fn(DissimilarityKind::Cs, combined.len(), |i, j| match form {
        CosineForm::Coherent => cosine_dissimilarity(&combined[i], &combined[j]),
        CosineForm::Entrywise => entrywise_cosine_dissimilarity(&combined[i], &combined[j]),
    })
}

/// Slope `s_t` making the median of `s_t |dt|` over gated pairs
/// (`0 < |dt| <= t_thresh`) equal the median of their cosine dissimilarity.
pub fn calibrate_time_slope(d: &DissimilarityMatrix, times: &[f64], t_thresh: f64) -> Result<f64> {
    check_times(d, times)?;
    let mut dts = Vec::new();
    let mut ds = Vec::new();
    for i in 0..d.n {
        for j in (i + 1)..d.n {
            let dt = (times[i] - times[j]).abs();
            if dt > 0.0 && dt <= t_thresh {
                dts.push(dt);
                ds.push(d.get(i, j));
            }
        }
    }
    if dts.is_empty() {
        return Err(Error::invalid(format!("no cluster pairs within {t_thresh} s of each other")));
    }
    let slope = median(&ds) / median(&dts);
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(Error::Numerical(format!("time slope calibration produced {slope}")));
    }
    Ok(slope)
}

fn check_times(d: &DissimilarityMatrix, times: &[f64]) -> Result<()> {
    if times.len() != d.n {
        return Err(Error::shape(format!("{} timestamps for a {}x{} matrix", times.len(), d.n, d.n)));
    }
    Ok(())
}

/// `min(d, s_t |dt|)` for pairs within `t_thresh`, `d` otherwise; zero diagonal.
pub fn fuse_with_time(
    d: &DissimilarityMatrix,
    times: &[f64],
    slope: f64,
    t_thresh: f64,
) -> Result<DissimilarityMatrix> {
    check_times(d, times)?;
    if !(slope > 0.0) || !(t_thresh > 0.0) {
        return Err(Error::invalid("time slope and threshold must be positive"));
    }
    Ok(DissimilarityMatrix::from_fn(DissimilarityKind::CsFuse, d.n, |i, j| {
        let dt = (times[i] - times[j]).abs();
        if dt <= t_thresh {
            d.get(i, j).min(slope * dt)
        } else {
            d.get(i, j)
        }
    }))
}

/// Adjacency lists of the symmetric k-nearest-neighbor graph: an edge is kept
/// when either endpoint selects the other. Distance ties go to the lower index.
pub fn knn_graph(d: &DissimilarityMatrix, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = d.n;
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("neighbor count {k} must be in [1, {})", n)));
    }
    let chosen: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect();
    let mut adj = vec![Vec::new(); n];
    for (i, nb) in chosen.iter().enumerate() {
        for &j in nb {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    Ok(adj
        .into_iter()
        .enumerate()
        .map(|(i, mut nb)| {
            nb.sort_unstable();
            nb.dedup();
            nb.into_iter().map(|j| (j, d.get(i, j))).collect()
        })
        .collect())
}

#[derive(PartialEq)]
struct Visit(f64, usize);

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra distances from `source`; unreachable nodes stay infinite.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Visit(0.0, source));
    while let Some(Visit(du, u)) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = du + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Visit(nd, v));
            }
        }
    }
    dist
}

/// Shortest-path distances between all node pairs; entry `(i, j)` with
/// `i < j` comes from the search rooted at `i` and is mirrored.
pub fn all_pairs_shortest_paths(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..adj.len()).into_par_iter().map(|s| dijkstra(adj, s)).collect();
    for i in 0..rows.len() {
        for j in 0..i {
            rows[i][j] = rows[j][i];
        }
    }
    rows
}

/// Geodesic completion over the k-NN graph. Disconnected pairs receive 1.5
/// times the largest finite geodesic; their count is returned.
pub fn geodesic_dissimilarities(d: &DissimilarityMatrix, k: usize) -> Result<(DissimilarityMatrix, usize)> {
    let adj = knn_graph(d, k)?;
    let rows = all_pairs_shortest_paths(&adj);
    let n = d.n;
    let max_finite = rows.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let fill = 1.5 * max_finite;
    let mut disconnected = 0;
    let mut values = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v.is_finite() {
                values.push(v);
            } else {
                if i < j {
                    disconnected += 1;
                }
                values.push(fill);
            }
        }
    }
    if disconnected > 0 {
        log::warn!("{disconnected} cluster pairs are disconnected in the {k}-NN graph");
    }
    Ok((DissimilarityMatrix { kind: DissimilarityKind::CsFuseGeo, n, values }, disconnected))
}

/// Least-squares scale `s = sum d e / sum d^2` between dissimilarities `d` and
/// distances `e` of triangulated positions, over at most `max_pairs` pairs of
/// clusters that have a position (drawn without replacement when there are more).
pub fn metric_scale(
    d: &DissimilarityMatrix,
    positions: &[Option<[f64; 2]>],
    max_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if positions.len() != d.n {
        return Err(Error::shape(format!("{} positions for a {}x{} matrix", positions.len(), d.n, d.n)));
    }
    let known: Vec<usize> = (0..d.n).filter(|&i| positions[i].is_some()).collect();
    if known.len() < 2 {
        return Err(Error::invalid("metric scaling needs at least two triangulated clusters"));
    }
    let pairs = sample_pairs(known.len(), max_pairs, seed);
    let (mut de, mut dd) = (0.0, 0.0);
    for (p, q) in pairs {
        let (i, j) = (known[p], known[q]);
        let (a, b) = (positions[i].unwrap(), positions[j].unwrap());
        let e = (a[0] - b[0]).hypot(a[1] - b[1]);
        let v = d.get(i, j);
        de += v * e;
        dd += v * v;
    }
    if dd == 0.0 {
        return Err(Error::invalid("dissimilarities are all zero"));
    }
    Ok(de / dd)
}

pub fn scale_to_meters(
    d: &DissimilarityMatrix,
    positions: &[Option<[f64; 2]>],
    max_pairs: usize,
    seed: u64,
) -> Result<(DissimilarityMatrix, f64)> {
    let s = metric_scale(d, positions, max_pairs, seed)?;
    let values = d.values.iter().map(|v| v * s).collect();
    Ok((DissimilarityMatrix { kind: DissimilarityKind::ScaledMeters, n: d.n, values }, s))
}

const MAGIC: &[u8; 4] = b"PCCM";
const VERSION: u32 = 1;

/// Writes the matrix in single precision with its kind and cluster ids.
pub fn save_matrix(d: &DissimilarityMatrix, cluster_ids: &[u32], path: &Path) -> Result<()> {
    if cluster_ids.len() != d.n {
        return Err(Error::shape(format!("{} cluster ids for a {}x{} matrix", cluster_ids.len(), d.n, d.n)));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, d.kind.tag())?;
    put_u32(&mut w, d.n as u32)?;
    for &id in cluster_ids {
        put_u32(&mut w, id)?;
    }
    for &v in &d.values {
        put_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<(DissimilarityMatrix, Vec<u32>)> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "dissimilarity matrix");
    r.magic(MAGIC, VERSION)?;
    let kind = DissimilarityKind::from_tag(r.u32()?)?;
    let n = r.u32()? as usize;
    let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let values = (0..n * n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((DissimilarityMatrix { kind, n, values }, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn combined(slices: Vec<Vec<C64>>) -> CombinedCsi {
        let zero_arrays = slices.iter().map(|s| energy(s) == 0.0).collect();
        CombinedCsi { slices, zero_arrays }
    }

    fn tiny_geometry(rows: usize, cols: usize, n_sub: usize) -> ScenarioGeometry {
        let mut g = ScenarioGeometry::standard();
        g.num_arrays = 1;
        g.rows = rows;
        g.cols = cols;
        g.num_subcarriers = n_sub;
        g.array_centers.truncate(1);
        g.array_boresights.truncate(1);
        g.array_row_axes.truncate(1);
        g.array_col_axes.truncate(1);
        g
    }

    #[test]
    fn rank_one_cluster_recovers_direction() {
        let g = tiny_geometry(1, 3, 2);
        let v = [c(0.5, 0.1), c(-1.0, 0.3), c(0.2, -0.7)];
        let scalars = [c(1.0, 0.0), c(0.0, 2.0), c(-0.5, 0.5)];
        // member k, subcarrier n holds scalars[(k + n) % 3] * v
        let members: Vec<Vec<C64>> = (0..3)
            .map(|k| {
                let mut h = vec![c(0.0, 0.0); 6];
                for (i, vi) in v.iter().enumerate() {
                    for n in 0..2 {
                        h[i * 2 + n] = scalars[(k + n) % 3] * vi;
                    }
                }
                h
            })
            .collect();
        let refs: Vec<&[C64]> = members.iter().map(|h| h.as_slice()).collect();
        let out = combine_cluster_csi(&refs, &g).unwrap();
        let s = &out.slices[0];
        let inner: C64 = s.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        assert!((inner.norm_sqr() / (energy(s) * energy(&v)) - 1.0).abs() < 1e-12);
        // largest-magnitude entry (index 1) is real positive
        assert!(s[1].im.abs() < 1e-12 && s[1].re > 0.0);
        // energy equals the total cluster energy for a rank-one cluster
        let total: f64 = members.iter().map(|h| energy(h)).sum();
        assert!((energy(s) - total).abs() < 1e-10 * total);
    }

    #[test]
    fn single_snapshot_is_returned_with_phase_convention() {
        let g = tiny_geometry(1, 2, 1);
        let h = [c(0.0, 1.0), c(0.5, 0.0)];
        let out = combine_cluster_csi(&[&h], &g).unwrap();
        let want = [c(1.0, 0.0), c(0.0, -0.5)];
        assert!(out.slices[0].iter().zip(&want).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn orthogonal_tie_is_deterministic() {
        let g = tiny_geometry(1, 2, 1);
        let a = [c(1.0, 0.0), c(0.0, 0.0)];
        let b = [c(0.0, 0.0), c(1.0, 0.0)];
        let first = combine_cluster_csi(&[&a, &b], &g).unwrap();
        let second = combine_cluster_csi(&[&a, &b], &g).unwrap();
        assert_eq!(first, second);
        let s = &first.slices[0];
        let is_a = (s[0] - c(1.0, 0.0)).norm() < 1e-12 && s[1].norm() < 1e-12;
        let is_b = (s[1] - c(1.0, 0.0)).norm() < 1e-12 && s[0].norm() < 1e-12;
        assert!(is_a || is_b, "{s:?}");
    }

    #[test]
    fn zero_cluster_is_flagged() {
        let g = tiny_geometry(1, 2, 1);
        let z = [c(0.0, 0.0); 2];
        let out = combine_cluster_csi(&[&z], &g).unwrap();
        assert_eq!(out.zero_arrays, vec![true]);
        assert!(combine_cluster_csi(&[], &g).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = combined(vec![vec![c(2.0, 1.0)]]);
        let b = combined(vec![vec![c(-0.3, 0.2)]]);
        assert!(cosine_dissimilarity(&a, &b).abs() < 1e-15);
        let a = combined(vec![vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        let b = combined(vec![vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        assert_eq!(cosine_dissimilarity(&a, &b), 1.0);
        assert_eq!(entrywise_cosine_dissimilarity(&a, &b), 1.0);
        let a = combined(vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        let b = combined(vec![vec![c(3.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        assert!((cosine_dissimilarity(&a, &b) - 1.0).abs() < 1e-15);
        assert!((entrywise_cosine_dissimilarity(&a, &b) - 1.0).abs() < 1e-15);
        let z = combined(vec![vec![c(0.0, 0.0), c(0.0, 0.0)]]);
        let w = combined(vec![vec![c(1.0, 0.0), c(1.0, 0.0)]]);
        assert_eq!(cosine_dissimilarity(&z, &w), 1.0);
    }

    #[test]
    fn entrywise_form_ignores_antenna_phases() {
        let a = combined(vec![vec![c(1.0, 0.0), c(1.0, 0.0)]]);
        let b = combined(vec![vec![c(1.0, 0.0), c(-1.0, 0.0)]]);
        assert!((cosine_dissimilarity(&a, &b) - 1.0).abs() < 1e-15);
        assert!((entrywise_cosine_dissimilarity(&a, &b) - 0.5).abs() < 1e-15);
        // self dissimilarity of a spread snapshot
        assert!((entrywise_cosine_dissimilarity(&a, &a) - 0.5).abs() < 1e-15);
        assert_eq!(cosine_dissimilarity(&a, &a), 0.0);
    }

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> DissimilarityMatrix {
        DissimilarityMatrix::from_fn(DissimilarityKind::Cs, n, f)
    }

    #[test]
    fn fusion_examples() {
        let d = matrix(3, |i, j| if i + j == 1 { 0.8 } else { 1.0 });
        let f = fuse_with_time(&d, &[0.0, 0.5, 10.0], 1.0, 2.0).unwrap();
        assert_eq!(f.get(0, 0), 0.0);
        assert_eq!(f.get(0, 1), 0.5);
        assert_eq!(f.get(1, 0), 0.5);
        assert_eq!(f.get(0, 2), 1.0);
        assert_eq!(f.kind, DissimilarityKind::CsFuse);
        assert!(fuse_with_time(&d, &[0.0, 1.0], 1.0, 2.0).is_err());
    }

    #[test]
    fn slope_matches_medians() {
        let times = [0.0, 1.0, 2.0, 3.0, 20.0];
        let d = matrix(5, |i, j| 0.1 * (i + j) as f64);
        let s = calibrate_time_slope(&d, &times, 3.0).unwrap();
        let mut dts = vec![];
        let mut ds = vec![];
        for i in 0..5 {
            for j in (i + 1)..5 {
                let dt = (times[i] - times[j]) as f64;
                if dt.abs() <= 3.0 {
                    dts.push(dt.abs());
                    ds.push(d.get(i, j));
                }
            }
        }
        assert!((s * median(&dts) - median(&ds)).abs() < 1e-12);
    }

    #[test]
    fn path_graph_geodesics() {
        let adj = vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0)]];
        assert_eq!(all_pairs_shortest_paths(&adj)[0][2], 2.0);
        let adj = vec![vec![(1, 1.0), (2, 5.0)], vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0), (0, 5.0)]];
        assert_eq!(all_pairs_shortest_paths(&adj)[0][2], 2.0);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let d = matrix(4, |i, j| (i as f64 - j as f64).abs());
        assert!(geodesic_dissimilarities(&d, 0).is_err());
        assert!(geodesic_dissimilarities(&d, 4).is_err());
    }

    #[test]
    fn points_on_a_line_keep_distances() {
        let d = matrix(10, |i, j| (i as f64 - j as f64).abs());
        let (g, disc) = geodesic_dissimilarities(&d, 1).unwrap();
        assert_eq!(disc, 0);
        assert_eq!(g.values, d.values);
    }

    #[test]
    fn disconnected_components_are_filled() {
        // two tight pairs far apart
        let pos = [0.0f64, 0.1, 10.0, 10.1];
        let d = matrix(4, |i, j| (pos[i] - pos[j]).abs());
        let (g, disc) = geodesic_dissimilarities(&d, 1).unwrap();
        assert_eq!(disc, 4);
        let max_finite = 0.1f64.max(10.1 - 10.0);
        assert!((g.get(0, 2) - 1.5 * max_finite).abs() < 1e-12);
    }

    #[test]
    fn metric_scale_examples() {
        let pos: Vec<Option<[f64; 2]>> = vec![Some([0.0, 0.0]), Some([3.0, 4.0]), Some([1.0, 0.0]), None];
        let dist = |i: usize, j: usize| match (pos[i], pos[j]) {
            (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]),
            _ => 7.0,
        };
        let d = matrix(4, dist);
        assert!((metric_scale(&d, &pos, 100, 0).unwrap() - 1.0).abs() < 1e-12);
        let d2 = matrix(4, |i, j| 2.0 * dist(i, j));
        let (scaled, s) = scale_to_meters(&d2, &pos, 100, 0).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
        assert_eq!(scaled.kind, DissimilarityKind::ScaledMeters);
        assert!(metric_scale(&matrix(4, |_, _| 0.0), &pos, 100, 0).is_err());
        assert!(metric_scale(&d, &[Some([0.0, 0.0]), None, None, None], 100, 0).is_err());
    }

    #[test]
    fn metric_scale_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let pos: Vec<Option<[f64; 2]>> =
            (0..n).map(|_| Some([rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0])).collect();
        let noise: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let d = matrix(n, |i, j| noise[i * n + j] + 0.3);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (pos[i].unwrap(), pos[j].unwrap());
                num += d.get(i, j) * (a[0] - b[0]).hypot(a[1] - b[1]);
                den += d.get(i, j) * d.get(i, j);
            }
        }
        assert!((metric_scale(&d, &pos, usize::MAX, 0).unwrap() - num / den).abs() < 1e-9);
        // subsampled estimate is deterministic and close
        let a = metric_scale(&d, &pos, 100, 3).unwrap();
        assert_eq!(a, metric_scale(&d, &pos, 100, 3).unwrap());
        assert!((a - num / den).abs() < 0.2 * num / den);
    }

    #[test]
    fn matrix_file_round_trips() {
        let d = matrix(3, |i, j| (i * 3 + j) as f64 * 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        save_matrix(&d, &[4, 5, 6], &p).unwrap();
        let (back, ids) = load_matrix(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(ids, vec![4, 5, 6]);
        assert!(save_matrix(&d, &[1], &p).is_err());
    }

    /// Shortest simple-path lengths by exhaustive depth-first enumeration,
    /// accumulating along the path from the source as Dijkstra does.
    pub(crate) fn brute_force_paths(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
        fn walk(adj: &[Vec<(usize, f64)>], u: usize, len: f64, seen: &mut Vec<bool>, best: &mut Vec<f64>) {
            if len < best[u] {
                best[u] = len;
            }
            for &(v, w) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    walk(adj, v, len + w, seen, best);
                    seen[v] = false;
                }
            }
        }
        let mut best = vec![f64::INFINITY; adj.len()];
        let mut seen = vec![false; adj.len()];
        seen[source] = true;
        walk(adj, source, 0.0, &mut seen, &mut best);
        best
    }

    fn random_graph(rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, f64)>> {
        let n = rng.random_range(1..=7);
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    let w = rng.random::<f64>() * 3.0;
                    adj[i].push((j, w));
                    adj[j].push((i, w));
                }
            }
        }
        adj
    }

    #[test]
    fn dijkstra_equals_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let adj = random_graph(&mut rng);
            for s in 0..adj.len() {
                assert_eq!(dijkstra(&adj, s), brute_force_paths(&adj, s));
            }
        }
    }

    fn arb_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0).prop_map(|(a, b)| [a, b]), 8..25)
    }

    fn euclid(p: &[[f64; 2]]) -> DissimilarityMatrix {
        matrix(p.len(), |i, j| (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]))
    }

    fn arb_combined(b: usize, m: usize) -> impl Strategy<Value = CombinedCsi> {
        proptest::collection::vec(
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y)| c(x, y)), m),
            b,
        )
        .prop_map(combined)
    }

    proptest! {
        #[test]
        fn cosine_is_bounded_and_symmetric(a in arb_combined(4, 8), b in arb_combined(4, 8)) {
            for f in [cosine_dissimilarity, entrywise_cosine_dissimilarity] {
                let d = f(&a, &b);
                prop_assert!((0.0..=4.0).contains(&d));
                prop_assert!((d - f(&b, &a)).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_ignores_phase_and_scale(a in arb_combined(2, 4), b in arb_combined(2, 4), phi in 0.0f64..6.3, s in 0.1f64..10.0) {
            let rotated = CombinedCsi {
                slices: a.slices.iter().map(|v| v.iter().map(|x| x * C64::from_polar(s, phi)).collect()).collect(),
                zero_arrays: a.zero_arrays.clone(),
            };
            prop_assert!((cosine_dissimilarity(&a, &b) - cosine_dissimilarity(&rotated, &b)).abs() < 1e-9);
            prop_assert!((entrywise_cosine_dissimilarity(&a, &b) - entrywise_cosine_dissimilarity(&rotated, &b)).abs() < 1e-9);
        }

        #[test]
        fn geodesics_satisfy_triangle_inequality(p in arb_points(), k in 1usize..5) {
            let (g, disc) = geodesic_dissimilarities(&euclid(&p), k).unwrap();
            prop_assume!(disc == 0);
            let n = p.len();
            for i in 0..n {
                prop_assert_eq!(g.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                    for m in 0..n {
                        prop_assert!(g.get(i, j) <= g.get(i, m) + g.get(m, j) + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn geodesics_never_exceed_edges(p in arb_points(), k in 1usize..5) {
            let d = euclid(&p);
            let adj = knn_graph(&d, k).unwrap();
            let (g, _) = geodesic_dissimilarities(&d, k).unwrap();
            for (i, nb) in adj.iter().enumerate() {
                for &(j, w) in nb {
                    prop_assert!(g.get(i, j) <= w);
                }
            }
        }

        #[test]
        fn more_neighbors_never_lengthen_paths(p in arb_points()) {
            let d = euclid(&p);
            let n = p.len();
            let ks = [2usize, 4, 7];
            let gs: Vec<_> = ks.iter().map(|&k| all_pairs_shortest_paths(&knn_graph(&d, k.min(n - 1)).unwrap())).collect();
            for w in gs.windows(2) {
                for i in 0..n {
                    for j in 0..n {
                        prop_assert!(w[1][i][j] <= w[0][i][j]);
                    }
                }
            }
        }
    }
}
