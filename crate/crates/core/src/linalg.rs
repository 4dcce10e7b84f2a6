//! Dense linear-algebra helpers on top of `faer`.
//!
//! Everything here works on `Mat<f64>` / `MatRef<f64>`. The helpers cover the
//! handful of patterns the chain modules repeat: diagonal scalings, principal
//! submatrices, spectral functions of symmetric matrices, Cholesky-based SPD
//! inverses, a Padé matrix exponential for non-symmetric generators, and
//! spectral/nuclear norms.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl SymEigen {
    /// `U f(Λ) Uᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Mat<f64> {
        let weights: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        weighted_gram(self.vectors.as_ref(), &weights)
    }
}

pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    check_finite(a)?;
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenFailure)?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok(SymEigen { values, vectors: evd.U().to_owned() })
}

pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_finite(a)?;
    a.self_adjoint_eigenvalues(Side::Lower).map_err(|_| Error::EigenFailure)
}

/// `U Diag(w) Uᵀ`, always exactly symmetric.
pub fn weighted_gram(u: MatRef<'_, f64>, w: &[f64]) -> Mat<f64> {
    let scaled = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * w[j]);
    symmetric_part((&scaled * u.transpose()).as_ref())
}

pub fn check_finite(a: MatRef<'_, f64>) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite);
            }
        }
    }
    Ok(())
}

/// `(A + Aᵀ) / 2`.
pub fn symmetric_part(a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()), "shape mismatch");
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

/// Max-entry deviation of `a` from `reference`, scaled by the largest entry of
/// the reference (absolute when the reference vanishes).
pub fn relative_residual(a: MatRef<'_, f64>, reference: MatRef<'_, f64>) -> f64 {
    let scale = max_abs(reference);
    let diff = max_abs_diff(a, reference);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Largest `|A_ij − A_ji|` relative to the largest entry.
pub fn asymmetry(a: MatRef<'_, f64>) -> f64 {
    let scale = max_abs(a);
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..j {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if scale > 0.0 {
        m / scale
    } else {
        m
    }
}

pub fn submatrix(a: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// `Diag(left) · A · Diag(right)`.
pub fn diag_scale(left: &[f64], a: MatRef<'_, f64>, right: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| left[i] * a[(i, j)] * right[j])
}

pub fn scale_rows(left: &[f64], a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| left[i] * a[(i, j)])
}

pub fn scale_cols(a: MatRef<'_, f64>, right: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * right[j])
}

pub fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn col_to_vec(a: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..a.nrows()).map(|i| a[(i, j)]).collect()
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn to_rows(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// Returns `None` when the factorization breaks down.
pub fn spd_inverse(a: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let llt = a.llt(Side::Lower).ok()?;
    let inv = llt.inverse();
    if inv.as_ref().is_all_finite() {
        Some(symmetric_part(inv.as_ref()))
    } else {
        None
    }
}

/// 2-norm condition number of a symmetric positive definite matrix.
pub fn spd_condition(a: MatRef<'_, f64>) -> Result<f64> {
    let values = sym_eigenvalues(a)?;
    let lo = values.first().copied().unwrap_or(1.0);
    let hi = values.last().copied().unwrap_or(1.0);
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Solve `A X = B` for square `A` by partially pivoted LU.
///
/// Returns `None` when the solution is not finite or the pivots vanish.
pub fn lu_solve(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let lu = a.partial_piv_lu();
    let u = lu.U();
    let scale = max_abs(a);
    for i in 0..u.nrows() {
        if u[(i, i)].abs() <= scale * 1e-14 {
            return None;
        }
    }
    let x = lu.solve(b);
    x.as_ref().is_all_finite().then_some(x)
}

/// Left null vector of a generator `R` (so `πᵀR = 0`), normalized to sum 1.
///
/// One column of `Rᵀ` is replaced by the normalization constraint and the
/// resulting square system solved by LU.
pub fn stationary_of_generator(r: MatRef<'_, f64>) -> Option<Vec<f64>> {
    let n = r.nrows();
    let mut a = Mat::from_fn(n, n, |i, j| r[(j, i)]);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = Mat::<f64>::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let x = lu_solve(a.as_ref(), b.as_ref())?;
    let v: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    let sum: f64 = v.iter().sum();
    Some(v.into_iter().map(|x| x / sum).collect())
}

/// Spectral and nuclear norm via singular values, or eigenvalue magnitudes
/// for symmetric input.
pub fn spectral_nuclear(a: MatRef<'_, f64>) -> Result<(f64, f64)> {
    check_finite(a)?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok((0.0, 0.0));
    }
    let sigma: Vec<f64> = if a.nrows() == a.ncols() && asymmetry(a) <= 1e-14 {
        sym_eigenvalues(symmetric_part(a).as_ref())?.into_iter().map(f64::abs).collect()
    } else {
        a.singular_values().map_err(|_| Error::EigenFailure)?
    };
    let spectral = sigma.iter().copied().fold(0.0, f64::max);
    Ok((spectral, sigma.iter().sum()))
}

/// Induced 1-norm (max column sum).
pub fn norm_one(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [1.495585217958292e-2, 2.53939833006323e-1, 9.504178996162932e-1, 2.097_847_961_257_068, 5.371_920_351_148_152];

/// Matrix exponential of a general square matrix by scaling and squaring with
/// a diagonal Padé approximant (Higham 2005 degree selection).
pub fn expm(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_finite(a)?;
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch { expected: "square".into(), found: format!("{}x{}", n, a.ncols()) });
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = norm_one(a);
    let ident = Mat::<f64>::identity(n, n);

    let low: [(&[f64], f64); 4] = [(&PADE3, THETA[0]), (&PADE5, THETA[1]), (&PADE7, THETA[2]), (&PADE9, THETA[3])];
    for (coeffs, theta) in low {
        if norm <= theta {
            return pade_low(a, coeffs, &ident);
        }
    }

    let s = if norm > THETA[4] { (norm / THETA[4]).log2().ceil().max(0.0) as i32 } else { 0 };
    let scale = 0.5f64.powi(s);
    let a_s = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let a2 = &a_s * &a_s;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let inner_u = Mat::from_fn(n, n, |i, j| b[13] * a6[(i, j)] + b[11] * a4[(i, j)] + b[9] * a2[(i, j)]);
    let tail_u = Mat::from_fn(n, n, |i, j| b[7] * a6[(i, j)] + b[5] * a4[(i, j)] + b[3] * a2[(i, j)] + b[1] * ident[(i, j)]);
    let u = &a_s * &(&(&a6 * &inner_u) + &tail_u);
    let inner_v = Mat::from_fn(n, n, |i, j| b[12] * a6[(i, j)] + b[10] * a4[(i, j)] + b[8] * a2[(i, j)]);
    let tail_v = Mat::from_fn(n, n, |i, j| b[6] * a6[(i, j)] + b[4] * a4[(i, j)] + b[2] * a2[(i, j)] + b[0] * ident[(i, j)]);
    let v = &(&a6 * &inner_v) + &tail_v;
    let mut r = pade_ratio(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: MatRef<'_, f64>, b: &[f64], ident: &Mat<f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    let a2 = a * a;
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() * 2 < b.len() {
        let next = powers.last().expect("nonempty") * &a2;
        powers.push(next);
    }
    let mut odd = Mat::<f64>::zeros(n, n);
    let mut even = Mat::<f64>::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k + 1 < b.len() {
            odd += Mat::from_fn(n, n, |i, j| b[2 * k + 1] * p[(i, j)]);
        }
        if 2 * k < b.len() {
            even += Mat::from_fn(n, n, |i, j| b[2 * k] * p[(i, j)]);
        }
    }
    let u = a * &odd;
    pade_ratio(&u, &even)
}

fn pade_ratio(u: &Mat<f64>, v: &Mat<f64>) -> Result<Mat<f64>> {
    let den = v - u;
    let num = v + u;
    lu_solve(den.as_ref(), num.as_ref()).ok_or(Error::NonFinite)
}

/// Log-spaced grid of `points` values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points).map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp()).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    fn rk4_expm(a: &Mat<f64>) -> Mat<f64> {
        // Integrate X' = A X on [0, 1] from X(0) = I.
        let n = a.nrows();
        let steps = 4000;
        let h = 1.0 / steps as f64;
        let mut x = Mat::<f64>::identity(n, n);
        for _ in 0..steps {
            let k1 = a * &x;
            let k2 = a * &(&x + &(&k1 * faer::Scale(h / 2.0)));
            let k3 = a * &(&x + &(&k2 * faer::Scale(h / 2.0)));
            let k4 = a * &(&x + &(&k3 * faer::Scale(h)));
            let incr = &(&(&k1 + &(&k2 * faer::Scale(2.0))) + &(&k3 * faer::Scale(2.0))) + &k4;
            x = &x + &(&incr * faer::Scale(h / 6.0));
        }
        x
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = Mat::<f64>::zeros(4, 4);
        let e = expm(z.as_ref()).unwrap();
        assert!(max_abs_diff(e.as_ref(), Mat::<f64>::identity(4, 4).as_ref()) < 1e-15);
    }

    #[test]
    fn expm_matches_rk4_on_nonsymmetric_inputs() {
        for scale in [1e-3, 0.1, 0.7, 1.8, 4.0, 12.0] {
            let a = mat![[-1.0, 0.5, 0.3, 0.2], [0.1, -0.4, 0.2, 0.1], [0.6, 0.0, -0.9, 0.3], [0.0, 0.2, 0.7, -0.9],];
            let a = &a * faer::Scale(scale);
            let e = expm(a.as_ref()).unwrap();
            let oracle = rk4_expm(&a);
            assert!(relative_residual(e.as_ref(), oracle.as_ref()) < 1e-9, "scale {scale}");
        }
    }

    #[test]
    fn expm_of_nilpotent_jordan_block() {
        let a = mat![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let e = expm(a.as_ref()).unwrap();
        let expected = mat![[1.0, 1.0, 0.5], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]];
        assert!(max_abs_diff(e.as_ref(), expected.as_ref()) < 1e-14);
    }

    #[test]
    fn expm_matches_spectral_route_for_symmetric_input() {
        let a = mat![[-2.0, 1.0, 0.5], [1.0, -3.0, 0.2], [0.5, 0.2, -1.0]];
        for t in [0.01, 1.0, 30.0] {
            let at = &a * faer::Scale(t);
            let e = expm(at.as_ref()).unwrap();
            let eig = sym_eigen(a.as_ref()).unwrap();
            let oracle = eig.apply(|l| (l * t).exp());
            assert!(max_abs_diff(e.as_ref(), oracle.as_ref()) < 1e-12 * max_abs(oracle.as_ref()).max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn norms_of_identity_and_rank_one() {
        let (s, nuc) = spectral_nuclear(Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && (nuc - 3.0).abs() < 1e-14);
        let h = [0.6, 0.8, 0.0];
        let r1 = Mat::from_fn(3, 3, |i, j| h[i] * h[j]);
        let (s, nuc) = spectral_nuclear(r1.as_ref()).unwrap();
        assert!((s - 1.0).abs() < 1e-14 && (nuc - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norms_of_nonsymmetric_use_singular_values() {
        let a = mat![[0.0, 2.0], [0.0, 0.0]];
        let (s, nuc) = spectral_nuclear(a.as_ref()).unwrap();
        assert!((s - 2.0).abs() < 1e-14 && (nuc - 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_is_rejected() {
        let a = mat![[f64::NAN, 0.0], [0.0, 1.0]];
        assert_eq!(spectral_nuclear(a.as_ref()), Err(Error::NonFinite));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-2, 1e3, 64);
        assert_eq!(g.len(), 64);
        assert!((g[0] - 1e-2).abs() < 1e-16 && (g[63] - 1e3).abs() < 1e-10);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
