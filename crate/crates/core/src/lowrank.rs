//! Selected eigenvalues of `Diag(d) + G·Diag(s)·Gᵀ` without forming the matrix.
//!
//! Error matrices of the compressions are exactly of this shape once written in
//! the eigenbasis of the Laplacian: a diagonal propagator minus (or plus) a
//! rank-`r` term living on the selected subspace. Their spectral and nuclear
//! norms only need a handful of eigenvalues, which we get by bisection on the
//! eigenvalue counting function.
//!
//! For a shift `μ` away from the diagonal, the Haynsworth inertia formula on
//! the bordered matrix `[[D − μ, G], [Gᵀ, −S]]` gives
//!
//! ```text
//! #{λ(M) < μ} = #{d_i < μ} + #neg(−S − Gᵀ(D − μ)⁻¹G) − #{s_j > 0}
//! ```
//!
//! which costs one `r × r` Gram product and one `r × r` eigenvalue solve.

use faer::Mat;

use crate::error::Result;
use crate::linalg::sym_eigenvalues;

/// `Diag(d) + G·Diag(signs)·Gᵀ` with `signs` in `{−1, +1}`.
#[derive(Debug, Clone)]
pub struct DiagPlusLowRank {
    d: Vec<f64>,
    g: Mat<f64>,
    signs: Vec<f64>,
    scale: f64,
}

impl DiagPlusLowRank {
    pub fn new(d: Vec<f64>, g: Mat<f64>, signs: Vec<f64>) -> Self {
        assert_eq!(d.len(), g.nrows(), "diagonal and low-rank factor disagree");
        assert_eq!(signs.len(), g.ncols(), "one sign per low-rank column");
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = dmax + column_norms_sq(&g).iter().sum::<f64>();
        Self { d, g, signs, scale }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn trace(&self) -> f64 {
        let gsq = column_norms_sq(&self.g);
        self.d.iter().sum::<f64>() + gsq.iter().zip(&self.signs).map(|(g, s)| g * s).sum::<f64>()
    }

    /// Dense form, for tests.
    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        let gs = Mat::from_fn(n, self.g.ncols(), |i, j| self.g[(i, j)] * self.signs[j]);
        let mut m = &gs * self.g.transpose();
        for i in 0..n {
            m[(i, i)] += self.d[i];
        }
        m
    }

    /// Number of eigenvalues strictly below `mu`.
    pub fn count_below(&self, mu: f64) -> Result<usize> {
        let mut mu = mu;
        let nudge = f64::EPSILON * self.scale.max(f64::MIN_POSITIVE) * 4.0;
        while self.d.contains(&mu) {
            mu += nudge.max(mu.abs() * f64::EPSILON * 4.0);
        }
        let r = self.g.ncols();
        let below_diag = self.d.iter().filter(|&&d| d < mu).count();
        if r == 0 {
            return Ok(below_diag);
        }
        let weights: Vec<f64> = self.d.iter().map(|&d| 1.0 / (d - mu)).collect();
        let gw = Mat::from_fn(self.dim(), r, |i, j| self.g[(i, j)] * weights[i]);
        let gram = self.g.transpose() * &gw;
        let f = Mat::from_fn(r, r, |i, j| {
            let sym = -0.5 * (gram[(i, j)] + gram[(j, i)]);
            if i == j {
                sym - self.signs[i]
            } else {
                sym
            }
        });
        let neg_f = sym_eigenvalues(f.as_ref())?.into_iter().filter(|&v| v < 0.0).count();
        let pos_signs = self.signs.iter().filter(|&&s| s > 0.0).count();
        Ok((below_diag + neg_f).saturating_sub(pos_signs))
    }

    /// Interval guaranteed to contain the spectrum.
    pub fn bracket(&self) -> (f64, f64) {
        let gsq = column_norms_sq(&self.g);
        let neg: f64 = gsq.iter().zip(&self.signs).filter(|(_, &s)| s < 0.0).map(|(g, _)| g).sum();
        let pos: f64 = gsq.iter().zip(&self.signs).filter(|(_, &s)| s > 0.0).map(|(g, _)| g).sum();
        let dmin = self.d.iter().copied().fold(f64::INFINITY, f64::min);
        let dmax = self.d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 4.0 * f64::EPSILON * self.scale + f64::MIN_POSITIVE;
        (dmin - neg - pad, dmax + pos + pad)
    }

    /// Eigenvalues at the requested ascending positions (0-based).
    pub fn eigenvalues_at(&self, positions: &[usize]) -> Result<Vec<f64>> {
        let n = self.dim();
        let (lo0, hi0) = self.bracket();
        let mut lo = vec![lo0; n.max(1)];
        let mut hi = vec![hi0; n.max(1)];
        self.bisect(positions, &mut lo, &mut hi)
    }

    fn bisect(&self, positions: &[usize], lo: &mut [f64], hi: &mut [f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let tol = 2.0 * f64::EPSILON * self.scale;
        let mut out = Vec::with_capacity(positions.len());
        for &p in positions {
            assert!(p < n, "eigenvalue position out of range");
            for _ in 0..200 {
                if hi[p] - lo[p] <= tol.max(f64::EPSILON * lo[p].abs().max(hi[p].abs())) {
                    break;
                }
                let mid = 0.5 * (lo[p] + hi[p]);
                if mid <= lo[p] || mid >= hi[p] {
                    break;
                }
                let c = self.count_below(mid)?;
                // λ_j < mid for j < c, λ_j >= mid for j >= c.
                for v in &mut hi[..c.min(n)] {
                    *v = v.min(mid);
                }
                for v in &mut lo[c.min(n)..] {
                    *v = v.max(mid);
                }
            }
            out.push(0.5 * (lo[p] + hi[p]));
        }
        Ok(out)
    }

    /// Spectral norm `max(λ_max, −λ_min)`.
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self.norms()?.0)
    }

    /// Spectral and nuclear norms.
    ///
    /// The nuclear norm is `Tr M − 2·Σ λ_neg`, so only the negative
    /// eigenvalues and the largest one are located. With a nonnegative
    /// diagonal, negative eigenvalues are searched strictly below
    /// `−τ = −NEAR_ZERO·scale`, where `D − μ` is positive definite and the
    /// inertia count is well conditioned; eigenvalues in `[−τ, 0)` are
    /// dropped, changing the nuclear norm by at most `2·r·τ`.
    pub fn norms(&self) -> Result<(f64, f64)> {
        let n = self.dim();
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        let (lo0, hi0) = self.bracket();
        let nonneg = self.d.iter().all(|&d| d >= 0.0);
        let cut = if nonneg { -NEAR_ZERO * self.scale } else { 0.0 };
        let neg = self.count_below(cut)?;
        let mut lo = vec![lo0; n];
        let mut hi: Vec<f64> = (0..n).map(|j| if j < neg { cut } else { hi0 }).collect();
        let negatives = self.bisect(&(0..neg).collect::<Vec<_>>(), &mut lo, &mut hi)?;
        let mut lo = vec![lo0; n];
        let mut hi = vec![hi0; n];
        let lambda_max = self.bisect(&[n - 1], &mut lo, &mut hi)?[0];
        let lambda_min = negatives.first().copied().unwrap_or(0.0);
        let neg_sum: f64 = negatives.iter().sum();
        let nuclear = (self.trace() - 2.0 * neg_sum).max(0.0);
        Ok((lambda_max.max(-lambda_min).max(0.0), nuclear))
    }
}

/// Relative size below which negative eigenvalues are treated as zero.
pub const NEAR_ZERO: f64 = 1e-12;

fn column_norms_sq(g: &Mat<f64>) -> Vec<f64> {
    (0..g.ncols()).map(|j| (0..g.nrows()).map(|i| g[(i, j)] * g[(i, j)]).sum()).collect()
}
