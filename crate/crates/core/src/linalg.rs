//! Dense complex linear algebra used across the pipeline.
//!
//! Large products go through `ndarray`'s real GEMM by splitting matrices into
//! real and imaginary parts; small Hermitian eigenproblems use `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Eigenpairs of a Hermitian matrix sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: Array2<C64>,
}

pub(crate) fn split(a: ArrayView2<C64>) -> (Array2<f64>, Array2<f64>) {
    (a.mapv(|c| c.re), a.mapv(|c| c.im))
}

pub(crate) fn join(re: &Array2<f64>, im: &Array2<f64>) -> Array2<C64> {
    let mut out = Array2::from_elem(re.dim(), C64::new(0.0, 0.0));
    ndarray::Zip::from(&mut out).and(re).and(im).for_each(|o, &r, &i| *o = C64::new(r, i));
    out
}

/// `A B` for complex matrices.
pub fn complex_matmul(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Array2<C64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    matmul_split(&ar, &ai, &br, &bi)
}

fn matmul_split(ar: &Array2<f64>, ai: &Array2<f64>, br: &Array2<f64>, bi: &Array2<f64>) -> Array2<C64> {
    let re = ar.dot(br) - ai.dot(bi);
    let im = ar.dot(bi) + ai.dot(br);
    join(&re, &im)
}

/// `A^H B` for complex matrices.
pub fn complex_adjoint_matmul(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Array2<C64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = ar.t().dot(&br) + ai.t().dot(&bi);
    let im = ar.t().dot(&bi) - ai.t().dot(&br);
    join(&re, &im)
}

/// Sum of outer products `sum_l x_l x_l^H` of the rows of `X = re + i im`.
///
/// Uses one symmetric GEMM for the real part and one for the imaginary part.
pub fn gram_of_rows(re: &Array2<f64>, im: &Array2<f64>) -> Array2<C64> {
    let (l, q) = re.dim();
    let mut stacked = Array2::<f64>::zeros((2 * l, q));
    stacked.slice_mut(s![..l, ..]).assign(re);
    stacked.slice_mut(s![l.., ..]).assign(im);
    let real = stacked.t().dot(&stacked);
    // Im(R)[i][j] = sum_l im_i re_j - re_i im_j
    let m = im.t().dot(re);
    let imag = &m - &m.t();
    let mut out = join(&real, &imag);
    // exact Hermitian symmetry
    for i in 0..q {
        out[(i, i)].im = 0.0;
        for j in (i + 1)..q {
            let v = out[(i, j)];
            out[(j, i)] = v.conj();
        }
    }
    out
}

fn to_nalgebra(a: ArrayView2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Full eigendecomposition of a (small) Hermitian matrix.
///
/// Ties keep the order produced by the underlying solver, which makes the
/// result deterministic for a given input.
pub fn hermitian_eigen(a: ArrayView2<C64>) -> Result<HermitianEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(format!("matrix is {}x{}, expected square", n, a.ncols())));
    }
    if a.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: Array2::from_elem((0, 0), C64::new(0.0, 0.0)) });
    }
    let mut m = to_nalgebra(a);
    // symmetrize to guard against round-off asymmetry in callers
    let mt = m.adjoint();
    m = (m + mt).scale(0.5);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Orthonormalizes the columns of `v` in place (modified Gram-Schmidt with one
/// re-orthogonalization pass). Columns that collapse numerically are replaced
/// by random directions drawn from `rng`.
fn orthonormalize(v: &mut Array2<C64>, rng: &mut ChaCha8Rng) {
    let (q, p) = v.dim();
    for j in 0..p {
        for attempt in 0..4 {
            let before: f64 = v.column(j).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for _ in 0..2 {
                for k in 0..j {
                    let proj: C64 = (0..q).map(|i| v[(i, k)].conj() * v[(i, j)]).sum();
                    for i in 0..q {
                        let vk = v[(i, k)];
                        v[(i, j)] -= proj * vk;
                    }
                }
            }
            let after: f64 = v.column(j).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 1e-300 {
                v.column_mut(j).mapv_inplace(|c| c / after);
                break;
            }
            if attempt == 3 {
                log::warn!("orthonormalization could not recover column {j}");
            }
            for i in 0..q {
                v[(i, j)] = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
    }
}

const DIRECT_EIGEN_LIMIT: usize = 160;

/// Leading `count` eigenpairs of a Hermitian positive semidefinite matrix.
///
/// Small matrices are decomposed directly. Larger ones use block subspace
/// iteration with Rayleigh-Ritz extraction; iteration stops once the leading
/// `count` Ritz values are stable to `1e-12` relative and the first
/// `vector_count` Ritz vectors have residual below `1e-10 * lambda_max`.
pub fn hermitian_top_eigen(a: ArrayView2<C64>, count: usize, vector_count: usize) -> Result<HermitianEigen> {
    let q = a.nrows();
    if a.ncols() != q {
        return Err(Error::shape(format!("matrix is {}x{}, expected square", q, a.ncols())));
    }
    if count > q || vector_count > count {
        return Err(Error::invalid(format!("requested {count} eigenpairs of a {q}x{q} matrix")));
    }
    if q <= DIRECT_EIGEN_LIMIT || 2 * count >= q {
        let full = hermitian_eigen(a)?;
        return Ok(HermitianEigen {
            values: full.values[..count].to_vec(),
            vectors: full.vectors.slice(s![.., ..count]).to_owned(),
        });
    }
    if a.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }

    let block = (count + 8).min(q);
    let (ar, ai) = split(a);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c1a7);
    let mut v = Array2::from_shape_fn((q, block), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    orthonormalize(&mut v, &mut rng);

    let mut prev: Vec<f64> = vec![f64::NAN; count];
    const MAX_ITER: usize = 2000;
    for iter in 0..MAX_ITER {
        let (vr, vi) = split(v.view());
        let w = matmul_split(&ar, &ai, &vr, &vi);
        let h = complex_adjoint_matmul(v.view(), w.view());
        let small = hermitian_eigen(h.view())?;
        let vr_ritz = complex_matmul(v.view(), small.vectors.view());
        let wr_ritz = complex_matmul(w.view(), small.vectors.view());
        let top = small.values[0].abs().max(f64::MIN_POSITIVE);

        let values_stable =
            small.values[..count].iter().zip(&prev).all(|(&new, &old)| (new - old).abs() <= 1e-12 * top);
        let vectors_converged = (0..vector_count).all(|j| {
            let theta = small.values[j];
            let res: f64 = (0..q).map(|i| (wr_ritz[(i, j)] - vr_ritz[(i, j)] * theta).norm_sqr()).sum::<f64>().sqrt();
            res <= 1e-10 * top
        });
        if (values_stable && vectors_converged) || iter + 1 == MAX_ITER {
            if iter + 1 == MAX_ITER {
                log::warn!("subspace iteration hit the iteration cap before converging");
            }
            return Ok(HermitianEigen {
                values: small.values[..count].to_vec(),
                vectors: vr_ritz.slice(s![.., ..count]).to_owned(),
            });
        }
        prev.copy_from_slice(&small.values[..count]);
        v = wr_ritz;
        orthonormalize(&mut v, &mut rng);
    }
    unreachable!("loop returns on the final iteration")
}

/// Roots of the polynomial `sum_i coeffs[i] z^i`.
///
/// Exact zero roots are split off first; the remaining factor is solved with
/// Aberth-Ehrlich simultaneous iteration followed by Newton polishing.
pub fn polynomial_roots(coeffs: &[C64]) -> Vec<C64> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![];
    }
    let tiny = 1e-14 * scale;
    let hi = match coeffs.iter().rposition(|c| c.norm() > tiny) {
        Some(h) => h,
        None => return vec![],
    };
    let lo = coeffs.iter().position(|c| c.norm() > tiny).unwrap();
    let mut roots = vec![C64::new(0.0, 0.0); lo];
    let a: Vec<C64> = coeffs[lo..=hi].iter().map(|c| c / coeffs[hi]).collect();
    let deg = a.len() - 1;
    if deg == 0 {
        return roots;
    }

    let eval = |z: C64| -> (C64, C64) {
        let mut p = a[deg];
        let mut dp = C64::new(0.0, 0.0);
        for i in (0..deg).rev() {
            dp = dp * z + p;
            p = p * z + a[i];
        }
        (p, dp)
    };

    let radius = a[0].norm().powf(1.0 / deg as f64).max(1e-3);
    let mut z: Vec<C64> =
        (0..deg).map(|k| C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / deg as f64 + 0.4)).collect();
    for _ in 0..500 {
        let mut max_step: f64 = 0.0;
        for k in 0..deg {
            let (p, dp) = eval(z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: C64 = (0..deg)
                .filter(|&j| j != k)
                .map(|j| {
                    let d = z[k] - z[j];
                    if d.norm() == 0.0 {
                        C64::new(0.0, 0.0)
                    } else {
                        d.inv()
                    }
                })
                .sum();
            let step = ratio / (C64::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[k] -= step;
                max_step = max_step.max(step.norm() / z[k].norm().max(1e-300));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval(*zk);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            let cand = *zk - step;
            if eval(cand).0.norm() < p.norm() {
                *zk = cand;
            } else {
                break;
            }
        }
    }
    roots.extend(z);
    roots
}
