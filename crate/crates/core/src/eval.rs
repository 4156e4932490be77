//! Affine alignment, localization and dimensionality-reduction metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{percentile_sorted, sample_pairs};

/// Default cap on the number of point pairs entering Kruskal's stress.
pub const MAX_STRESS_PAIRS: usize = 1_000_000;

/// `x -> A x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self { a: [[1.0, 0.0], [0.0, 1.0]], b: [0.0, 0.0] };

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0], self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1]]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_pairs(preds: &[[f64; 2]], labels: &[[f64; 2]]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.iter().chain(labels).flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite coordinates"));
    }
    Ok(())
}

/// Least-squares affine map from predictions onto labels.
pub fn optimal_affine(preds: &[[f64; 2]], labels: &[[f64; 2]]) -> Result<AffineTransform> {
    check_pairs(preds, labels)?;
    let n = preds.len();
    if n < 3 {
        return Err(Error::RankDeficient(format!("{n} points cannot fix an affine map")));
    }
    let mean = |v: &[[f64; 2]], k: usize| v.iter().map(|p| p[k]).sum::<f64>() / n as f64;
    let mp = [mean(preds, 0), mean(preds, 1)];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in preds {
        let (dx, dy) = (p[0] - mp[0], p[1] - mp[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx * syy - sxy * sxy <= 1e-12 * (sxx + syy).powi(2) {
        return Err(Error::RankDeficient("predictions are collinear".into()));
    }
    let mut m = Matrix3::zeros();
    let mut rhs = [Vector3::zeros(), Vector3::zeros()];
    for (p, l) in preds.iter().zip(labels) {
        let z = Vector3::new(p[0] - mp[0], p[1] - mp[1], 1.0);
        m += z * z.transpose();
        for k in 0..2 {
            rhs[k] += z * l[k];
        }
    }
    let lu = m.lu();
    let rows = [
        lu.solve(&rhs[0]).ok_or_else(|| Error::RankDeficient("normal equations are singular".into()))?,
        lu.solve(&rhs[1]).ok_or_else(|| Error::RankDeficient("normal equations are singular".into()))?,
    ];
    let a = [[rows[0][0], rows[0][1]], [rows[1][0], rows[1][1]]];
    // the fit used centered inputs; fold the centering into the offset
    let b = [rows[0][2] - a[0][0] * mp[0] - a[0][1] * mp[1], rows[1][2] - a[1][0] * mp[0] - a[1][1] * mp[1]];
    Ok(AffineTransform { a, b })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub mae: f64,
    pub drms: f64,
    pub cep: f64,
    pub r95: f64,
}

pub fn localization_metrics(errors: &[f64]) -> Result<LocalizationMetrics> {
    if errors.is_empty() {
        return Err(Error::invalid("no localization errors"));
    }
    let n = errors.len() as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(LocalizationMetrics {
        mae: errors.iter().sum::<f64>() / n,
        drms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        cep: percentile_sorted(&sorted, 50.0),
        r95: percentile_sorted(&sorted, 95.0),
    })
}

/// `sqrt(sum (|l_i - l_j| - |p_i - p_j|)^2 / sum |l_i - l_j|^2)` over all pairs,
/// or over `max_pairs` seeded random pairs when there are more.
pub fn kruskal_stress(preds: &[[f64; 2]], labels: &[[f64; 2]], max_pairs: usize, seed: u64) -> Result<f64> {
    check_pairs(preds, labels)?;
    if preds.len() < 2 {
        return Err(Error::invalid("stress needs at least two points"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, j) in sample_pairs(preds.len(), max_pairs, seed) {
        let dl = dist(labels[i], labels[j]);
        let dp = dist(preds[i], preds[j]);
        num += (dl - dp) * (dl - dp);
        den += dl * dl;
    }
    if den == 0.0 {
        return Err(Error::invalid("all labels are identical"));
    }
    Ok((num / den).sqrt())
}

/// Default neighborhood size `max(1, round(0.05 N))`.
pub fn default_neighborhood(n: usize) -> usize {
    ((0.05 * n as f64).round() as usize).max(1)
}

/// `ranks[i][j]`: 1-based rank of `j` among the neighbors of `i` sorted by
/// distance, ties broken by index; the diagonal is 0.
fn neighbor_ranks(points: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist(points[i], points[a]).total_cmp(&dist(points[i], points[b])).then(a.cmp(&b)));
            let mut rank = vec![0; n];
            for (r, &j) in order.iter().enumerate() {
                rank[j] = r + 1;
            }
            rank
        })
        .collect()
}

/// Continuity and trustworthiness with neighborhood size `k`.
pub fn continuity_trustworthiness(preds: &[[f64; 2]], labels: &[[f64; 2]], k: usize) -> Result<(f64, f64)> {
    check_pairs(preds, labels)?;
    let n = preds.len();
    if k == 0 || 3 * k + 1 >= 2 * n {
        return Err(Error::invalid(format!("neighborhood size {k} out of range for {n} points")));
    }
    let rank_chart = neighbor_ranks(preds);
    let rank_label = neighbor_ranks(labels);
    let (mut ct, mut tw) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (rc, rl) = (rank_chart[i][j], rank_label[i][j]);
            if rc <= k && rl > k {
                tw += (rl - k) as f64;
            }
            if rl <= k && rc > k {
                ct += (rc - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let norm = 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0));
    Ok((1.0 - norm * ct, 1.0 - norm * tw))
}

/// Empirical CDF as `(radius, fraction <= radius)` at each distinct error.
pub fn error_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub drms: f64,
    pub cep: f64,
    pub r95: f64,
    pub ks: f64,
    pub ct: f64,
    pub tw: f64,
    pub neighborhood: usize,
    pub evaluated: usize,
    pub excluded: usize,
    /// Present when predictions were aligned before scoring.
    pub affine: Option<AffineTransform>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Fit and apply the optimal affine map before scoring.
    pub align: bool,
    /// Continuity/trustworthiness neighborhood; `None` for the default.
    pub neighborhood: Option<usize>,
    pub max_stress_pairs: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { align: true, neighborhood: None, max_stress_pairs: MAX_STRESS_PAIRS, seed: 0 }
    }
}

/// Scored predictions with their per-point errors.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Possibly aligned predictions of the evaluated points.
    pub aligned: Vec<[f64; 2]>,
    pub labels: Vec<[f64; 2]>,
    pub errors: Vec<f64>,
}

/// Scores predictions against labels; `None` predictions are excluded.
pub fn evaluate(preds: &[Option<[f64; 2]>], labels: &[[f64; 2]], options: &EvalOptions) -> Result<Evaluation> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let (p, l): (Vec<[f64; 2]>, Vec<[f64; 2]>) =
        preds.iter().zip(labels).filter_map(|(p, l)| p.map(|p| (p, *l))).unzip();
    let excluded = preds.len() - p.len();
    let affine = if options.align { Some(optimal_affine(&p, &l)?) } else { None };
    let aligned: Vec<[f64; 2]> = match &affine {
        Some(t) => p.iter().map(|&x| t.apply(x)).collect(),
        None => p,
    };
    let errors: Vec<f64> = aligned.iter().zip(&l).map(|(&a, &b)| dist(a, b)).collect();
    let loc = localization_metrics(&errors)?;
    let k = options.neighborhood.unwrap_or_else(|| default_neighborhood(aligned.len()));
    let ks = kruskal_stress(&aligned, &l, options.max_stress_pairs, options.seed)?;
    let (ct, tw) = continuity_trustworthiness(&aligned, &l, k)?;
    let report = MetricReport {
        mae: loc.mae,
        drms: loc.drms,
        cep: loc.cep,
        r95: loc.r95,
        ks,
        ct,
        tw,
        neighborhood: k,
        evaluated: aligned.len(),
        excluded,
        affine,
    };
    Ok(Evaluation { report, aligned, labels: l, errors })
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn write_cdf_csv(cdf: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut s = String::from("radius_m,fraction\n");
    for (r, f) in cdf {
        writeln!(s, "{r},{f}").unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

/// Scatter plot of chart points, each colored by its label position
/// (red grows with x, green with y).
pub fn chart_svg(points: &[[f64; 2]], labels: &[[f64; 2]]) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 20.0;
    let bounds = |v: &[[f64; 2]], k: usize| {
        let lo = v.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = v.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = SIZE + 2.0 * MARGIN
    );
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (px, pw) = bounds(points, 0);
    let (py, ph) = bounds(points, 1);
    let span = pw.max(ph);
    let (lx, lw) = bounds(labels, 0);
    let (ly, lh) = bounds(labels, 1);
    for (p, l) in points.iter().zip(labels) {
        let x = MARGIN + (p[0] - px) / span * SIZE;
        let y = MARGIN + SIZE - (p[1] - py) / span * SIZE;
        let r = (255.0 * (l[0] - lx) / lw).round() as u8;
        let g = (255.0 * (l[1] - ly) / lh).round() as u8;
        writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"rgb({r},{g},128)\"/>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>() * 4.5, rng.random::<f64>() * 4.5]).collect()
    }

    #[test]
    fn affine_identity_and_rotation() {
        let l = random_points(20, 1);
        let t = optimal_affine(&l, &l).unwrap();
        for k in 0..2 {
            assert!((t.b[k]).abs() < 1e-12);
            for m in 0..2 {
                assert!((t.a[k][m] - if k == m { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let rotated: Vec<[f64; 2]> = l.iter().map(|p| [-p[1], p[0]]).collect();
        let t = optimal_affine(&rotated, &l).unwrap();
        let want = [[0.0, 1.0], [-1.0, 0.0]];
        for k in 0..2 {
            for m in 0..2 {
                assert!((t.a[k][m] - want[k][m]).abs() < 1e-12);
            }
        }
        for (p, q) in rotated.iter().zip(&l) {
            assert!(dist(t.apply(*p), *q) < 1e-12);
        }
    }

    #[test]
    fn affine_matches_normal_equations() {
        // independent oracle: uncentered normal equations [x, y, 1]
        let p = random_points(30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l: Vec<[f64; 2]> = p
            .iter()
            .map(|q| [0.3 * q[0] - 1.2 * q[1] + 2.0 + rng.random::<f64>() * 0.1, 0.7 * q[0] + 0.2 * q[1] - 1.0])
            .collect();
        let mut m = nalgebra::Matrix3::<f64>::zeros();
        let mut r = [nalgebra::Vector3::<f64>::zeros(); 2];
        for (q, y) in p.iter().zip(&l) {
            let z = nalgebra::Vector3::new(q[0], q[1], 1.0);
            m += z * z.transpose();
            r[0] += z * y[0];
            r[1] += z * y[1];
        }
        let inv = m.try_inverse().unwrap();
        let t = optimal_affine(&p, &l).unwrap();
        for k in 0..2 {
            let s = inv * r[k];
            assert!((t.a[k][0] - s[0]).abs() < 1e-9 && (t.a[k][1] - s[1]).abs() < 1e-9 && (t.b[k] - s[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_rejects_collinear_points() {
        let p: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(optimal_affine(&p, &random_points(10, 1)), Err(Error::RankDeficient(_))));
        assert!(optimal_affine(&p[..2], &p[..2]).is_err());
    }

    #[test]
    fn localization_examples() {
        let m = localization_metrics(&[3.0, 4.0]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.drms - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.cep, 3.5);
        let z = localization_metrics(&[0.0; 5]).unwrap();
        assert_eq!((z.mae, z.drms, z.cep, z.r95), (0.0, 0.0, 0.0, 0.0));
        assert!(localization_metrics(&[]).is_err());
    }

    #[test]
    fn percentiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e: Vec<f64> = (0..1000).map(|_| -rng.random::<f64>().ln()).collect();
        let mut s = e.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = localization_metrics(&e).unwrap();
        // h = 999 * 0.5 = 499.5 and 999 * 0.95 = 949.05
        assert_eq!(m.cep, s[499] + 0.5 * (s[500] - s[499]));
        assert_eq!(m.r95, s[949] + (949.05 - 949.0) * (s[950] - s[949]));
    }

    #[test]
    fn stress_examples() {
        let l = random_points(15, 4);
        assert_eq!(kruskal_stress(&l, &l, MAX_STRESS_PAIRS, 0).unwrap(), 0.0);
        let doubled: Vec<[f64; 2]> = l.iter().map(|p| [2.0 * p[0], 2.0 * p[1]]).collect();
        assert!((kruskal_stress(&doubled, &l, MAX_STRESS_PAIRS, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(kruskal_stress(&l, &[[1.0, 1.0]; 15], MAX_STRESS_PAIRS, 0).is_err());
    }

    #[test]
    fn stress_matches_double_loop() {
        let (p, l) = (random_points(40, 5), random_points(40, 6));
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..40 {
            for j in 0..40 {
                if i != j {
                    let dl = dist(l[i], l[j]);
                    num += (dl - dist(p[i], p[j])).powi(2);
                    den += dl * dl;
                }
            }
        }
        let ks = kruskal_stress(&p, &l, MAX_STRESS_PAIRS, 0).unwrap();
        assert!((ks - (num / den).sqrt()).abs() < 1e-9);
        let sub = kruskal_stress(&p, &l, 300, 1).unwrap();
        assert!((sub - ks).abs() < 0.1 * ks);
    }

    #[test]
    fn ct_tw_identity_and_random_permutation() {
        let l = random_points(200, 7);
        assert_eq!(continuity_trustworthiness(&l, &l, 10).unwrap(), (1.0, 1.0));
        let mut p = l.clone();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
        let (ct, tw) = continuity_trustworthiness(&p, &l, 10).unwrap();
        assert!(ct < 0.8 && tw < 0.8, "{ct} {tw}");
        assert!(continuity_trustworthiness(&l, &l, 0).is_err());
        assert!(continuity_trustworthiness(&l, &l, 200).is_err());
    }

    #[test]
    fn ct_tw_small_hand_enumeration() {
        // labels at x = 0..5 on a line; the chart swaps points 0 and 5
        let l: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let mut p = l.clone();
        p.swap(0, 5);
        // k = 1, ties to the lower index.
        // label neighbors: 0->1 1->0 2->1 3->2 4->3 5->4
        // chart neighbors: 0->4 1->2 2->1 3->2 4->0 5->1
        // trustworthiness, label ranks of intruders: (0,4) 4, (1,2) 2, (4,0) 5, (5,1) 4 -> 3+1+4+3
        // continuity, chart ranks of missing: (0,1) 4, (1,0) 5, (4,3) 2, (5,4) 4 -> 3+4+1+3
        let (ct, tw) = continuity_trustworthiness(&p, &l, 1).unwrap();
        let want = 1.0 - 2.0 / 48.0 * 11.0;
        assert!((tw - want).abs() < 1e-12 && (ct - want).abs() < 1e-12, "{ct} {tw}");
    }

    #[test]
    fn ct_tw_match_pairwise_rank_oracle() {
        let (p, l) = (random_points(25, 10), random_points(25, 11));
        let (ct, tw) = continuity_trustworthiness(&p, &l, 3).unwrap();
        let norm = 2.0 / (25.0 * 3.0 * (50.0 - 9.0 - 1.0));
        assert!((ct - (1.0 - norm * brute_force_violation_sum(&p, &l, 3))).abs() < 1e-12);
        assert!((tw - (1.0 - norm * brute_force_violation_sum(&l, &p, 3))).abs() < 1e-12);
    }

    /// Continuity penalty of chart `p` against labels `l` (swap the arguments for
    /// trustworthiness), with ranks counted from pairwise comparisons.
    fn brute_force_violation_sum(p: &[[f64; 2]], l: &[[f64; 2]], k: usize) -> f64 {
        let n = p.len();
        let rank = |pts: &[[f64; 2]], i: usize, j: usize| {
            1 + (0..n)
                .filter(|&m| m != i && m != j)
                .filter(|&m| {
                    let (dm, dj) = (dist(pts[i], pts[m]), dist(pts[i], pts[j]));
                    dm < dj || (dm == dj && m < j)
                })
                .count()
        };
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j && rank(l, i, j) <= k && rank(p, i, j) > k {
                    s += (rank(p, i, j) - k) as f64;
                }
            }
        }
        s
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(error_cdf(&[3.0, 1.0, 2.0]), vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(error_cdf(&[1.0, 1.0, 2.0, 2.0]), vec![(1.0, 0.5), (2.0, 1.0)]);
    }

    #[test]
    fn evaluate_counts_exclusions_and_writes_artifacts() {
        let l = random_points(50, 9);
        let mut p: Vec<Option<[f64; 2]>> = l.iter().map(|x| Some([x[1] + 1.0, -x[0]])).collect();
        p[3] = None;
        let ev = evaluate(&p, &l, &EvalOptions::default()).unwrap();
        assert_eq!(ev.report.excluded, 1);
        assert_eq!(ev.report.evaluated, 49);
        assert!(ev.report.mae < 1e-9 && ev.report.ks < 1e-9);
        assert_eq!((ev.report.ct, ev.report.tw), (1.0, 1.0));
        let raw = evaluate(&p, &l, &EvalOptions { align: false, ..EvalOptions::default() }).unwrap();
        assert!(raw.report.mae > 1.0 && raw.report.affine.is_none());
        let dir = tempfile::tempdir().unwrap();
        write_report(&ev.report, &dir.path().join("report.json")).unwrap();
        let back: MetricReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, ev.report);
        write_cdf_csv(&error_cdf(&ev.errors), &dir.path().join("cdf.csv")).unwrap();
        let svg = chart_svg(&ev.aligned, &ev.labels);
        assert_eq!(svg.matches("<circle").count(), 49);
    }

    fn arb_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| [a, b]), n)
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_drms(e in proptest::collection::vec(0.0f64..10.0, 1..50)) {
            let m = localization_metrics(&e).unwrap();
            prop_assert!(m.mae <= m.drms * (1.0 + 1e-12));
            prop_assert!(m.cep <= m.r95);
        }

        #[test]
        fn affine_never_worse_than_identity(pl in arb_points(5..30).prop_flat_map(|p| {
            let n = p.len();
            (Just(p), arb_points(n..n + 1))
        })) {
            let (p, l) = pl;
            if let Ok(t) = optimal_affine(&p, &l) {
                let mse = |f: &dyn Fn([f64; 2]) -> [f64; 2]| p.iter().zip(&l).map(|(a, b)| dist(f(*a), *b).powi(2)).sum::<f64>();
                prop_assert!(mse(&|x| t.apply(x)) <= mse(&|x| x) * (1.0 + 1e-9) + 1e-9);
            }
        }

        #[test]
        fn ct_tw_invariant_to_similarity_transforms(p in arb_points(12..30), theta in 0.0f64..6.3, s in 0.2f64..5.0, sh in -3.0f64..3.0) {
            let l: Vec<[f64; 2]> = p.iter().map(|q| [q[0] + 0.3 * q[1].sin(), q[1]]).collect();
            let (c, sn) = (theta.cos(), theta.sin());
            let moved: Vec<[f64; 2]> = p.iter().map(|q| [s * (c * q[0] - sn * q[1]) + sh, s * (sn * q[0] + c * q[1]) - sh]).collect();
            let a = continuity_trustworthiness(&p, &l, 2).unwrap();
            let b = continuity_trustworthiness(&moved, &l, 2).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.0) && (0.0..=1.0).contains(&a.1));
        }

        #[test]
        fn stress_invariant_to_common_rigid_motion(p in arb_points(3..20), theta in 0.0f64..6.3, sh in -3.0f64..3.0) {
            let l: Vec<[f64; 2]> = p.iter().map(|q| [q[0] * 1.1, q[1] + 0.2 * q[0]]).collect();
            let (c, s) = (theta.cos(), theta.sin());
            let rot = |v: &[[f64; 2]]| v.iter().map(|q| [c * q[0] - s * q[1] + sh, s * q[0] + c * q[1]]).collect::<Vec<_>>();
            if let Ok(a) = kruskal_stress(&p, &l, MAX_STRESS_PAIRS, 0) {
                let b = kruskal_stress(&rot(&p), &rot(&l), MAX_STRESS_PAIRS, 0).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
