//! Angle-of-arrival triangulation baseline.
//!
//! Per cluster and array, the azimuth covariance over all member packets, rows
//! and subcarriers feeds a single-source root-MUSIC estimator. The root
//! magnitude becomes a von Mises concentration and the position estimate is
//! the argmax of the product of per-array von Mises likelihoods.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clutter::{ClutterModel, ClutterOrder};
use crate::datamodel::{cluster_datapoints, Area, Cluster, Dataset, ScenarioGeometry, Vec3};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, polynomial_roots, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoAEstimate {
    pub array: usize,
    /// Azimuth relative to the boresight, positive towards the column axis.
    pub azimuth: f64,
    pub kappa: f64,
    pub root_magnitude: f64,
}

/// `sum_l sum_{m_r} sum_n h h^H` over the column vectors `h = H[b, m_r, :, n]`
/// of every member CSI.
pub fn azimuth_covariance(members: &[&[C64]], geometry: &ScenarioGeometry, b: usize) -> Result<Array2<C64>> {
    if b >= geometry.num_arrays {
        return Err(Error::invalid(format!("array index {b} outside [0, {})", geometry.num_arrays)));
    }
    let mc = geometry.cols;
    let q = geometry.csi_len();
    let mut r = Array2::from_elem((mc, mc), C64::new(0.0, 0.0));
    for h in members {
        if h.len() != q {
            return Err(Error::shape(format!("csi length {} != {q}", h.len())));
        }
        for mr in 0..geometry.rows {
            for n in 0..geometry.num_subcarriers {
                for i in 0..mc {
                    let hi = h[geometry.csi_index(b, mr, i, n)];
                    for j in i..mc {
                        r[(i, j)] += hi * h[geometry.csi_index(b, mr, j, n)].conj();
                    }
                }
            }
        }
    }
    for i in 0..mc {
        r[(i, i)].im = 0.0;
        for j in 0..i {
            r[(i, j)] = r[(j, i)].conj();
        }
    }
    Ok(r)
}

/// Single-source root-MUSIC for a uniform linear array with steering vector
/// `a[m] = exp(j 2 pi spacing m sin(alpha))`.
///
/// Returns the azimuth and the magnitude of the selected root, which is the
/// root inside the unit circle closest to it.
pub fn root_music_single_source(r: &Array2<C64>, spacing_wavelengths: f64) -> Result<(f64, f64)> {
    let m = r.nrows();
    if m < 2 || r.ncols() != m {
        return Err(Error::shape(format!(
            "root-MUSIC needs a square matrix with at least 2 columns, got {:?}",
            r.dim()
        )));
    }
    let scale = r.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::NoInformation);
    }
    let eig = hermitian_eigen(r.view())?;
    // noise projector from all but the dominant eigenvector
    let mut coeffs = vec![C64::new(0.0, 0.0); 2 * m - 1];
    for k in 1..m {
        let v = eig.vectors.column(k);
        for i in 0..m {
            for j in 0..m {
                // z^{j - i} term of a^H C a
                coeffs[j + m - 1 - i] += v[i] * v[j].conj();
            }
        }
    }
    let roots = polynomial_roots(&coeffs);
    let best = roots
        .iter()
        .map(|&z| if z.norm() > 1.0 { 1.0 / z.conj() } else { z })
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(C64::new(0.0, 0.0));
    let magnitude = best.norm().min(1.0);
    let s = best.arg() / (2.0 * PI * spacing_wavelengths);
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::NoValidAngle(s));
    }
    Ok((s.asin(), magnitude))
}

/// Root-magnitude to concentration mapping `kappa_max * |z|^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaHeuristic {
    pub kappa_max: f64,
    pub power: f64,
}

impl Default for KappaHeuristic {
    fn default() -> Self {
        Self { kappa_max: 50.0, power: 4.0 }
    }
}

impl KappaHeuristic {
    pub fn kappa(&self, root_magnitude: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&root_magnitude) {
            return Err(Error::invalid(format!("root magnitude {root_magnitude} outside [0, 1]")));
        }
        Ok(self.kappa_max * root_magnitude.powf(self.power))
    }
}

pub fn kappa_from_root(root_magnitude: f64) -> Result<f64> {
    KappaHeuristic::default().kappa(root_magnitude)
}

/// `ln I_0(x)`, from the power series for moderate `x` and the asymptotic
/// expansion beyond.
pub fn log_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 30.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum.ln()
    } else {
        let inv = 1.0 / (8.0 * x);
        // prod_{i<=k} (2i - 1)^2 / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd * inv / k as f64;
            sum += term;
        }
        x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
    }
}

/// Natural log of the product of per-array von Mises densities at horizontal position `xy`.
pub fn log_vonmises_likelihood(
    xy: [f64; 2],
    height: f64,
    estimates: &[AoAEstimate],
    geometry: &ScenarioGeometry,
) -> Result<f64> {
    let point = [xy[0], xy[1], height];
    let mut total = 0.0;
    for e in estimates {
        let theta = geometry
            .azimuth(e.array, point)
            .ok_or_else(|| Error::invalid(format!("position {xy:?} coincides with array {}", e.array)))?;
        total += e.kappa * (theta - e.azimuth).cos() - (2.0 * PI).ln() - log_bessel_i0(e.kappa);
    }
    Ok(total)
}

pub fn vonmises_likelihood(
    xy: [f64; 2],
    height: f64,
    estimates: &[AoAEstimate],
    geometry: &ScenarioGeometry,
) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("no AoA estimates"));
    }
    Ok(log_vonmises_likelihood(xy, height, estimates, geometry)?.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationOptions {
    pub grid_pitch: f64,
    /// Estimates with `kappa` at or below this value count as uninformative.
    pub kappa_min: f64,
    /// Stop refining once the simplex is smaller than this (m).
    pub tolerance: f64,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        Self { grid_pitch: 0.1, kappa_min: 0.1, tolerance: 1e-3 }
    }
}

/// Maximizes `f` starting from `start` with a 2-D Nelder-Mead simplex.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: f64, tolerance: f64) -> [f64; 2] {
    let cost = |p: [f64; 2]| {
        let v = -f(p);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut s = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut c = s.map(cost);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..500 {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&i, &j| c[i].total_cmp(&c[j]));
        s = idx.map(|i| s[i]);
        c = idx.map(|i| c[i]);
        let size = (1..3).map(|i| (s[i][0] - s[0][0]).hypot(s[i][1] - s[0][1])).fold(0.0, f64::max);
        if size < tolerance {
            break;
        }
        let centroid = lerp(s[0], s[1], 0.5);
        let reflected = lerp(centroid, s[2], -1.0);
        let cr = cost(reflected);
        if cr < c[0] {
            let expanded = lerp(centroid, s[2], -2.0);
            let ce = cost(expanded);
            if ce < cr {
                (s[2], c[2]) = (expanded, ce);
            } else {
                (s[2], c[2]) = (reflected, cr);
            }
        } else if cr < c[1] {
            (s[2], c[2]) = (reflected, cr);
        } else {
            let contracted = if cr < c[2] { lerp(centroid, reflected, 0.5) } else { lerp(centroid, s[2], 0.5) };
            let cc = cost(contracted);
            if cc < c[2].min(cr) {
                (s[2], c[2]) = (contracted, cc);
            } else {
                for i in 1..3 {
                    s[i] = lerp(s[0], s[i], 0.5);
                    c[i] = cost(s[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| c[i].total_cmp(&c[j])).unwrap();
    s[best]
}

/// Position maximizing the von Mises likelihood over `area`.
///
/// A grid search at `grid_pitch` picks the starting point for a Nelder-Mead
/// refinement; the result is clamped to the area.
pub fn triangulate(
    estimates: &[AoAEstimate],
    geometry: &ScenarioGeometry,
    area: &Area,
    options: &TriangulationOptions,
) -> Result<[f64; 2]> {
    if !(options.grid_pitch > 0.0) {
        return Err(Error::invalid("grid pitch must be positive"));
    }
    if !estimates.is_empty() && estimates.iter().all(|e| e.kappa == 0.0) {
        return Err(Error::NoInformation);
    }
    let informative = estimates.iter().filter(|e| e.kappa > options.kappa_min).count();
    if informative < 2 {
        return Err(Error::InsufficientBearings { informative });
    }
    let f = |p: [f64; 2]| log_vonmises_likelihood(p, area.height, estimates, geometry).unwrap_or(f64::NEG_INFINITY);

    let nx = (area.width() / options.grid_pitch).round() as usize;
    let ny = (area.depth() / options.grid_pitch).round() as usize;
    let mut best = ([area.x_min, area.y_min], f64::NEG_INFINITY);
    for i in 0..=nx {
        for j in 0..=ny {
            let p = [
                area.x_min + area.width() * i as f64 / nx.max(1) as f64,
                area.y_min + area.depth() * j as f64 / ny.max(1) as f64,
            ];
            let v = f(p);
            if v > best.1 {
                best = (p, v);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numerical("likelihood is undefined over the whole grid".into()));
    }
    let refined = nelder_mead(f, best.0, 0.5 * options.grid_pitch, options.tolerance);
    let refined = if f(refined) >= best.1 { refined } else { best.0 };
    Ok([refined[0].clamp(area.x_min, area.x_max), refined[1].clamp(area.y_min, area.y_max)])
}

/// Per-array AoA estimates of one cluster; arrays whose root-MUSIC fails yield `None`.
pub fn cluster_estimates(
    members: &[&[C64]],
    geometry: &ScenarioGeometry,
    heuristic: &KappaHeuristic,
) -> Result<Vec<Option<AoAEstimate>>> {
    let spacing = geometry.spacing_wavelengths();
    (0..geometry.num_arrays)
        .map(|b| {
            let r = azimuth_covariance(members, geometry, b)?;
            Ok(match root_music_single_source(&r, spacing) {
                Ok((azimuth, root_magnitude)) => {
                    Some(AoAEstimate { array: b, azimuth, kappa: heuristic.kappa(root_magnitude)?, root_magnitude })
                }
                Err(Error::NoInformation | Error::NoValidAngle(_)) => None,
                Err(e) => return Err(e),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationResult {
    pub cluster_id: usize,
    pub mean_time: f64,
    pub label: Vec3,
    pub estimates: Vec<Option<AoAEstimate>>,
    pub position: Option<[f64; 2]>,
    /// Reason the cluster was excluded, if it was.
    pub flag: Option<String>,
}

/// Triangulates every cluster of a clutter-rejected dataset.
pub fn triangulate_clusters(
    clean: &Dataset,
    clusters: &[Cluster],
    area: &Area,
    heuristic: &KappaHeuristic,
    options: &TriangulationOptions,
) -> Result<Vec<TriangulationResult>> {
    let g = &clean.geometry;
    clusters
        .par_iter()
        .enumerate()
        .map(|(id, c)| {
            let members: Vec<&[C64]> = c.indices.iter().map(|&l| clean.datapoints[l].csi.as_slice()).collect();
            let estimates = cluster_estimates(&members, g, heuristic)?;
            let valid: Vec<AoAEstimate> = estimates.iter().flatten().copied().collect();
            let (position, flag) = match triangulate(&valid, g, area, options) {
                Ok(p) => (Some(p), None),
                Err(e @ (Error::NoInformation | Error::InsufficientBearings { .. } | Error::Numerical(_))) => {
                    (None, Some(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            Ok(TriangulationResult {
                cluster_id: id,
                mean_time: c.mean_time,
                label: c.mean_position,
                estimates,
                position,
                flag,
            })
        })
        .collect()
}

/// Clutter removal, clustering and triangulation on a single dataset.
pub fn triangulation_baseline(
    dataset: &Dataset,
    order: ClutterOrder,
    delta_t: f64,
    area: &Area,
    options: &TriangulationOptions,
) -> Result<Vec<TriangulationResult>> {
    let clean = ClutterModel::fit(dataset, order)?.apply(dataset)?;
    let clusters = cluster_datapoints(&clean, delta_t)?;
    let results = triangulate_clusters(&clean, &clusters, area, &KappaHeuristic::default(), options)?;
    let flagged = results.iter().filter(|r| r.flag.is_some()).count();
    if flagged > 0 {
        log::warn!("{flagged} of {} clusters could not be triangulated", results.len());
    }
    Ok(results)
}

/// Writes one CSV row per cluster: id, mean time, label, estimate, per-array
/// azimuth and kappa (empty when unavailable) and the exclusion flag.
pub fn write_estimates_csv(results: &[TriangulationResult], num_arrays: usize, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "cluster_id,t_mean,x_label,y_label,z_label,x_hat,y_hat")?;
    for b in 0..num_arrays {
        write!(w, ",alpha_{b},kappa_{b}")?;
    }
    writeln!(w, ",flag")?;
    for r in results {
        write!(w, "{},{},{},{},{}", r.cluster_id, r.mean_time, r.label[0], r.label[1], r.label[2])?;
        match r.position {
            Some(p) => write!(w, ",{},{}", p[0], p[1])?,
            None => write!(w, ",,")?,
        }
        for e in &r.estimates {
            match e {
                Some(e) => write!(w, ",{},{}", e.azimuth, e.kappa)?,
                None => write!(w, ",,")?,
            }
        }
        writeln!(w, ",{}", r.flag.as_deref().unwrap_or("").replace(',', ";"))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clutter::apply_crap;
    use crate::datamodel::Datapoint;
    use crate::simulator::{generate_trajectory, simulate_dataset, Scene, SimConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn steering(alpha: f64, m: usize, spacing: f64) -> Vec<C64> {
        (0..m).map(|k| C64::from_polar(1.0, 2.0 * PI * spacing * k as f64 * alpha.sin())).collect()
    }

    fn rank_one(v: &[C64], eps: f64) -> Array2<C64> {
        let m = v.len();
        Array2::from_shape_fn((m, m), |(i, j)| {
            v[i] * v[j].conj() + if i == j { C64::new(eps, 0.0) } else { C64::new(0.0, 0.0) }
        })
    }

    /// I_0 by trapezoidal quadrature of (1/pi) int_0^pi exp(x cos t) dt,
    /// which converges spectrally for this periodic integrand.
    fn i0_quadrature(x: f64) -> f64 {
        let n = 2000;
        let h = PI / n as f64;
        let mut s = 0.5 * ((x).exp() + (-x).exp());
        for k in 1..n {
            s += (x * (k as f64 * h).cos()).exp();
        }
        s * h / PI
    }

    #[test]
    fn bessel_matches_quadrature() {
        for x in [0.0, 0.3, 1.0, 5.0, 17.0, 29.9, 30.1, 45.0, 120.0, 600.0] {
            let want = i0_quadrature(x).ln();
            assert!((log_bessel_i0(x) - want).abs() < 1e-11 * want.abs().max(1.0), "x={x}");
        }
        assert!((log_bessel_i0(1.0).exp() - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!(log_bessel_i0(5000.0).is_finite());
    }

    #[test]
    fn single_member_single_row_is_outer_product() {
        let g = ScenarioGeometry::with_upright_arrays(
            1,
            1,
            4,
            1,
            2.4e9,
            1e6,
            vec![[0.0; 3]],
            vec![[1.0, 0.0, 0.0]],
            vec![[5.0, 5.0, 5.0]],
        );
        let row = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
        let r = azimuth_covariance(&[&row], &g, 0).unwrap();
        let expected = rank_one(&row, 0.0);
        assert!(r.iter().zip(expected.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
        let eig = hermitian_eigen(r.view()).unwrap();
        assert!(eig.values[1].abs() < 1e-12);
        let zero = vec![C64::new(0.0, 0.0); 4];
        assert!(azimuth_covariance(&[&zero], &g, 0).unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn covariance_matches_triple_loop() {
        let g = ScenarioGeometry::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        let members: Vec<Vec<C64>> = (0..5)
            .map(|_| (0..g.csi_len()).map(|_| C64::new(n.sample(&mut rng), n.sample(&mut rng))).collect())
            .collect();
        let refs: Vec<&[C64]> = members.iter().map(|v| v.as_slice()).collect();
        for b in 0..g.num_arrays {
            let r = azimuth_covariance(&refs, &g, b).unwrap();
            for i in 0..g.cols {
                for j in 0..g.cols {
                    let mut want = C64::new(0.0, 0.0);
                    for h in &members {
                        for mr in 0..g.rows {
                            for k in 0..g.num_subcarriers {
                                want += h[g.csi_index(b, mr, i, k)] * h[g.csi_index(b, mr, j, k)].conj();
                            }
                        }
                    }
                    assert!((r[(i, j)] - want).norm() < 1e-10 * want.norm().max(1.0));
                }
            }
            let asym = r.iter().zip(r.t().iter()).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max);
            assert!(asym < 1e-10);
        }
    }

    #[test]
    fn broadside_and_oblique_sources() {
        let r = rank_one(&steering(0.0, 4, 0.5), 1e-3);
        let (a, mag) = root_music_single_source(&r, 0.5).unwrap();
        assert!(a.to_degrees().abs() < 0.1);
        assert!(mag > 0.99);
        let r = rank_one(&steering(30f64.to_radians(), 4, 0.5), 1e-3);
        let (a, _) = root_music_single_source(&r, 0.5).unwrap();
        assert!((a.to_degrees() - 30.0).abs() < 0.5);
    }

    #[test]
    fn pure_noise_gives_small_root() {
        let r = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let (_, mag) = root_music_single_source(&r, 0.5).unwrap();
        // observed: all noise-polynomial roots sit at the origin
        assert!(mag < 0.1, "root magnitude {mag}");
        assert!(kappa_from_root(mag).unwrap() < 1e-3);
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let r = Array2::from_elem((4, 4), C64::new(0.0, 0.0));
        assert!(root_music_single_source(&r, 0.5).is_err());
    }

    #[test]
    fn out_of_range_root_is_rejected() {
        // the root phase of a 40 degree source at half-wavelength pitch is
        // inconsistent with a much smaller assumed pitch
        let r = rank_one(&steering(40f64.to_radians(), 4, 0.5), 1e-3);
        assert!(matches!(root_music_single_source(&r, 0.05), Err(Error::NoValidAngle(_))));
    }

    #[test]
    fn kappa_heuristic_values() {
        assert_eq!(kappa_from_root(0.0).unwrap(), 0.0);
        assert_eq!(kappa_from_root(1.0).unwrap(), 50.0);
        assert!((kappa_from_root(0.5).unwrap() - 3.125).abs() < 1e-12);
        assert!(kappa_from_root(1.5).is_err());
        assert!(kappa_from_root(-0.1).is_err());
    }

    fn estimate(array: usize, azimuth: f64, kappa: f64) -> AoAEstimate {
        AoAEstimate { array, azimuth, kappa, root_magnitude: 1.0 }
    }

    #[test]
    fn uniform_likelihood_with_zero_kappa() {
        let g = ScenarioGeometry::standard();
        let est: Vec<_> = (0..4).map(|b| estimate(b, 0.3, 0.0)).collect();
        for p in [[0.5, 0.5], [3.0, 1.0], [2.0, 4.0]] {
            let v = vonmises_likelihood(p, 1.0, &est, &g).unwrap();
            assert!((v - (2.0 * PI).powi(-4)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_array_unit_kappa_value() {
        let g = ScenarioGeometry::standard();
        let p = [1.0, 2.0];
        let theta = g.azimuth(0, [p[0], p[1], 1.0]).unwrap();
        let v = vonmises_likelihood(p, 1.0, &[estimate(0, theta, 1.0)], &g).unwrap();
        let i0 = i0_quadrature(1.0);
        assert!((v - 1f64.exp() / (2.0 * PI * i0)).abs() < 1e-12);
        assert!((v - 0.3417).abs() < 1e-4);
    }

    #[test]
    fn vonmises_factor_is_normalized() {
        for kappa in [0.0, 0.5, 3.0, 50.0, 800.0] {
            let n = 4000;
            let h = 2.0 * PI / n as f64;
            let integral: f64 = (0..n)
                .map(|k| (kappa * (k as f64 * h - 0.7).cos() - (2.0 * PI).ln() - log_bessel_i0(kappa)).exp() * h)
                .sum();
            assert!((integral - 1.0).abs() < 1e-6, "kappa={kappa}: {integral}");
        }
    }

    fn two_array_geometry() -> ScenarioGeometry {
        ScenarioGeometry::with_upright_arrays(
            2,
            1,
            4,
            53,
            2.472e9,
            16.56e6,
            vec![[0.0, 0.0, 1.0], [0.0, 4.0, 1.0]],
            vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[-1.0, 2.0, 2.5]],
        )
    }

    #[test]
    fn two_ray_intersection() {
        let g = two_array_geometry();
        let area = Area::new(0.0, 4.5, 0.0, 4.5, 1.0);
        let target = [3.0, 2.0, 1.0];
        let est: Vec<_> = (0..2).map(|b| estimate(b, g.azimuth(b, target).unwrap(), 50.0)).collect();
        let p = triangulate(&est, &g, &area, &TriangulationOptions::default()).unwrap();
        assert!((p[0] - 3.0).hypot(p[1] - 2.0) < 0.02, "{p:?}");
        // the grid maximum is also the global one among grid points
        let best = log_vonmises_likelihood(p, 1.0, &est, &g).unwrap();
        assert!(best >= log_vonmises_likelihood([3.1, 2.1], 1.0, &est, &g).unwrap());
    }

    #[test]
    fn degenerate_bearings_are_rejected() {
        let g = two_array_geometry();
        let area = Area::standard();
        let opts = TriangulationOptions::default();
        assert!(matches!(
            triangulate(&[estimate(0, 0.1, 50.0), estimate(1, 0.1, 0.05)], &g, &area, &opts),
            Err(Error::InsufficientBearings { informative: 1 })
        ));
        assert!(matches!(
            triangulate(&[estimate(0, 0.1, 0.0), estimate(1, 0.1, 0.0)], &g, &area, &opts),
            Err(Error::NoInformation)
        ));
    }

    #[test]
    fn noisy_bearings_monte_carlo() {
        let g = ScenarioGeometry::standard();
        let area = Area::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 2f64.to_radians()).unwrap();
        let mut errors: Vec<f64> = (0..100)
            .map(|_| {
                let t = [
                    0.3 + 3.9 * rand::Rng::random::<f64>(&mut rng),
                    0.3 + 3.9 * rand::Rng::random::<f64>(&mut rng),
                    1.0,
                ];
                let est: Vec<_> =
                    (0..4).map(|b| estimate(b, g.azimuth(b, t).unwrap() + noise.sample(&mut rng), 50.0)).collect();
                let p = triangulate(&est, &g, &area, &TriangulationOptions::default()).unwrap();
                (p[0] - t[0]).hypot(p[1] - t[1])
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[50] < 0.15, "median error {}", errors[50]);
    }

    #[test]
    fn boresight_target_after_clutter_removal() {
        let cfg = SimConfig {
            clutter_paths_per_tx: 0,
            noise_std: 0.0,
            target_gain: 0.0,
            packet_rate_per_tx: 5.0,
            ..SimConfig::default()
        };
        let tr = generate_trajectory(1, 2.0, &cfg.area, 0.2).unwrap();
        let empty_room = simulate_dataset(&cfg, &tr).unwrap();
        let model = ClutterModel::fit(&empty_room, ClutterOrder::Fixed(1)).unwrap();

        let with_target = SimConfig { target_gain: 0.1, ..cfg.clone() };
        let scene = Scene::new(&with_target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = &cfg.geometry;
        let center = g.array_centers[0];
        let target = [center[0], center[1] + 2.5, center[2]];
        let angle = |h: &[C64]| {
            let r = azimuth_covariance(&[h], g, 0).unwrap();
            root_music_single_source(&r, g.spacing_wavelengths()).unwrap().0.to_degrees()
        };
        for tx in 1..=4 {
            let packet = scene.synthesize(target, tx, &mut rng).unwrap();
            let subspace = model.subspace(tx).unwrap();
            let clean = crate::clutter::remove_clutter(&packet.csi, subspace).unwrap();
            let projected = crate::clutter::remove_clutter(&packet.target_component, subspace).unwrap();
            assert!(angle(&packet.target_component).abs() < 1e-6);
            // the direct path is removed exactly; what remains is the target
            // response minus its component along the direct path
            assert!((angle(&clean) - angle(&projected)).abs() < 1e-6, "tx {tx}");
            // that projection biases the angle slightly for ceiling transmitters
            assert!(angle(&clean).abs() < 1.5, "tx {tx}: {} deg", angle(&clean));
        }
    }

    #[test]
    fn noiseless_pipeline_is_accurate() {
        let cfg = SimConfig { noise_std: 0.0, packet_rate_per_tx: 8.0, seed: 3, ..SimConfig::default() };
        let tr = generate_trajectory(4, 40.0, &cfg.area, 0.25).unwrap();
        let d = simulate_dataset(&cfg, &tr).unwrap();
        let res = triangulation_baseline(&d, ClutterOrder::default(), 1.0, &cfg.area, &TriangulationOptions::default())
            .unwrap();
        let errors: Vec<f64> =
            res.iter().filter_map(|r| r.position.map(|p| (p[0] - r.label[0]).hypot(p[1] - r.label[1]))).collect();
        assert!(errors.len() * 10 >= res.len() * 9);
        let mae = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(mae < 0.1, "MAE {mae}");
        let again =
            triangulation_baseline(&d, ClutterOrder::default(), 1.0, &cfg.area, &TriangulationOptions::default())
                .unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn zero_csi_clusters_are_flagged() {
        let g = ScenarioGeometry::standard();
        let dps = (0..8)
            .map(|l| Datapoint {
                csi: vec![C64::new(0.0, 0.0); g.csi_len()],
                position: [1.0, 1.0, 1.0],
                timestamp: l as f64 * 0.4,
                tx_index: (l % 4 + 1) as u32,
            })
            .collect();
        let d = Dataset::new(g, dps).unwrap();
        let clean = apply_crap(&d, 1).unwrap();
        let clusters = cluster_datapoints(&clean, 1.0).unwrap();
        let res = triangulate_clusters(
            &clean,
            &clusters,
            &Area::standard(),
            &KappaHeuristic::default(),
            &TriangulationOptions::default(),
        )
        .unwrap();
        assert!(!res.is_empty());
        assert!(res.iter().all(|r| r.flag.is_some() && r.position.is_none()));
    }

    #[test]
    fn csv_has_one_row_per_cluster() {
        let r = TriangulationResult {
            cluster_id: 0,
            mean_time: 0.5,
            label: [1.0, 2.0, 1.0],
            estimates: vec![Some(estimate(0, 0.1, 2.0)), None],
            position: Some([1.1, 2.1]),
            flag: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_estimates_csv(&[r.clone(), TriangulationResult { position: None, flag: Some("x".into()), ..r }], 2, &p)
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn root_music_tracks_the_source_angle(deg in -60.0f64..60.0) {
            let r = rank_one(&steering(deg.to_radians(), 4, 0.5), 1e-4);
            let (a, _) = root_music_single_source(&r, 0.5).unwrap();
            prop_assert!((a.to_degrees() - deg).abs() < 0.5);
        }

        #[test]
        fn consistent_bearing_pair_meets_at_the_intersection(x in 1.0f64..4.0, y in 0.5f64..3.5) {
            let g = two_array_geometry();
            let t = [x, y, 1.0];
            let est: Vec<_> = (0..2).map(|b| estimate(b, g.azimuth(b, t).unwrap(), 20.0)).collect();
            let p = triangulate(&est, &g, &Area::new(0.0, 4.5, 0.0, 4.5, 1.0), &TriangulationOptions::default()).unwrap();
            prop_assert!((p[0] - x).hypot(p[1] - y) < 0.02);
        }
    }
}
