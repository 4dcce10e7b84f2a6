//! Reversible chains and their symmetrized spectral machinery.
//!
//! A [`ReversibleChain`] stores the off-diagonal rates sparsely together with
//! the stationary distribution `π` and `h = √π`. [`symmetrize`] turns it into a
//! [`SpectralLaplacian`]: the symmetric PSD matrix `L = −Diag(h)·R·Diag⁻¹(h)`
//! with a full eigendecomposition and the pseudoinverse `K = L⁺`. Everything
//! downstream (committors, induced chains, error norms) reads from these two
//! types.

use std::collections::VecDeque;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};

/// Relative threshold for treating an eigenvalue of `L` as zero.
pub const NULL_TOLERANCE: f64 = 1e-10;
/// Relative tolerance on `π_i R_ij = π_j R_ji`.
pub const DETAILED_BALANCE_TOLERANCE: f64 = 1e-8;

/// A continuous-time chain satisfying detailed balance.
#[derive(Debug, Clone)]
pub struct ReversibleChain {
    rows: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
    pi: Vec<f64>,
    h: Vec<f64>,
}

impl ReversibleChain {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    /// `h = √π`.
    pub fn sqrt_stationary(&self) -> &[f64] {
        &self.h
    }

    /// Off-diagonal transitions out of `i` as `(target, rate)`, sorted by target.
    pub fn transitions(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Total exit rate `−R_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    /// Rate `R_ij` (off-diagonal or diagonal).
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return -self.exit[i];
        }
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(k, _)| k).map_or(0.0, |p| row[p].1)
    }

    pub fn nnz_off_diagonal(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Off-diagonal entries as `(i, j, R_ij)` triplets.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.rows.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |&(j, r)| (i, j, r))).collect()
    }

    /// Dense `R`.
    pub fn rate_matrix(&self) -> Mat<f64> {
        let n = self.n();
        let mut r = Mat::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            r[(i, i)] = -self.exit[i];
            for &(j, v) in row {
                r[(i, j)] = v;
            }
        }
        r
    }

    /// `R·X` using the sparse rows.
    pub fn apply_rates(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(x.nrows(), self.n(), "shape mismatch");
        Mat::from_fn(self.n(), x.ncols(), |i, c| {
            let mut acc = -self.exit[i] * x[(i, c)];
            for &(j, v) in &self.rows[i] {
                acc += v * x[(j, c)];
            }
            acc
        })
    }
}

/// Build a chain from off-diagonal rates, solving for `π` when it is absent.
///
/// Duplicate `(i, j)` entries are summed; zero rates are dropped.
pub fn build_chain(n: usize, rates: &[(usize, usize, f64)], stationary: Option<&[f64]>) -> Result<ReversibleChain> {
    if n == 0 {
        return Err(Error::InvalidArgument("chain needs at least one state".into()));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, r) in rates {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        if i == j || !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidRate { i, j, rate: r });
        }
        if r > 0.0 {
            rows[i].push((j, r));
        }
    }
    for row in &mut rows {
        row.sort_by_key(|&(j, _)| j);
        row.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
    }
    check_connected(&rows)?;
    let exit: Vec<f64> = rows.iter().map(|row| row.iter().map(|&(_, r)| r).sum()).collect();

    let pi = match stationary {
        Some(p) => {
            if p.len() != n {
                return Err(Error::ShapeMismatch { expected: format!("{n} stationary weights"), found: p.len().to_string() });
            }
            validate_distribution(p)?;
            p.to_vec()
        }
        None => solve_stationary(&rows, &exit)?,
    };
    check_detailed_balance(&rows, &pi)?;
    let h = pi.iter().map(|p| p.sqrt()).collect();
    Ok(ReversibleChain { rows, exit, pi, h })
}

/// Random-walk chain on a weighted undirected graph.
///
/// With degree vector `d = Δ1` the rates are `R = Diag⁻¹(d)(Δ − Diag(d))`, so
/// every state leaves at unit rate, and `π = d / 1ᵀd`.
pub fn webgraph_chain(n: usize, adjacency: &[(usize, usize, f64)]) -> Result<ReversibleChain> {
    if n == 0 {
        return Err(Error::InvalidArgument("graph needs at least one vertex".into()));
    }
    let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, w) in adjacency {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        if i == j {
            if w != 0.0 {
                return Err(Error::SelfLoop(i));
            }
            continue;
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidRate { i, j, rate: w });
        }
        if w > 0.0 {
            weights[i].push((j, w));
        }
    }
    for row in &mut weights {
        row.sort_by_key(|&(j, _)| j);
        row.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
    }
    for (i, row) in weights.iter().enumerate() {
        for &(j, w) in row {
            let back = weights[j].binary_search_by_key(&i, |&(k, _)| k).map(|p| weights[j][p].1);
            match back {
                Ok(b) if (b - w).abs() <= 1e-12 * w.abs().max(b.abs()) => {}
                _ => return Err(Error::AsymmetricAdjacency { i, j }),
            }
        }
    }
    check_connected(&weights)?;
    let degree: Vec<f64> = weights.iter().map(|row| row.iter().map(|&(_, w)| w).sum()).collect();
    let total: f64 = degree.iter().sum();
    let pi: Vec<f64> = degree.iter().map(|d| d / total).collect();
    let rates: Vec<(usize, usize, f64)> = weights
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            let d = degree[i];
            row.iter().map(move |&(j, w)| (i, j, w / d))
        })
        .collect();
    if n == 1 {
        return build_chain(1, &[], Some(&[1.0]));
    }
    build_chain(n, &rates, Some(&pi))
}

fn check_connected(rows: &[Vec<(usize, f64)>]) -> Result<()> {
    let n = rows.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    if reached == n {
        Ok(())
    } else {
        Err(Error::DisconnectedGraph { reached, n })
    }
}

fn validate_distribution(p: &[f64]) -> Result<()> {
    for (index, &value) in p.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveStationary { index, value });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::UnnormalizedStationary { sum });
    }
    Ok(())
}

fn solve_stationary(rows: &[Vec<(usize, f64)>], exit: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    let mut r = Mat::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        r[(i, i)] = -exit[i];
        for &(j, v) in row {
            r[(i, j)] = v;
        }
    }
    let pi = linalg::stationary_of_generator(r.as_ref()).ok_or(Error::NonPositiveStationary { index: 0, value: f64::NAN })?;
    for (index, &value) in pi.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveStationary { index, value });
        }
    }
    Ok(pi)
}

fn check_detailed_balance(rows: &[Vec<(usize, f64)>], pi: &[f64]) -> Result<()> {
    let scale = rows.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |&(_, r)| pi[i] * r)).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(());
    }
    for (i, row) in rows.iter().enumerate() {
        for &(j, r) in row {
            let back = rows[j].binary_search_by_key(&i, |&(k, _)| k).map_or(0.0, |p| rows[j][p].1);
            let residual = (pi[i] * r - pi[j] * back).abs() / scale;
            if residual > DETAILED_BALANCE_TOLERANCE {
                return Err(Error::DetailedBalanceViolated { residual, i, j });
            }
        }
    }
    Ok(())
}

/// Symmetric PSD generator `L`, its eigendecomposition and `K = L⁺`.
#[derive(Debug, Clone)]
pub struct SpectralLaplacian {
    l: Mat<f64>,
    eigen: SymEigen,
    k: Mat<f64>,
    h: Vec<f64>,
    null_rank: usize,
}

/// Build `L = −Diag(h)·R·Diag⁻¹(h)` and its spectral data.
pub fn symmetrize(chain: &ReversibleChain) -> Result<SpectralLaplacian> {
    let n = chain.n();
    let h = chain.sqrt_stationary();
    let mut l = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = chain.exit_rate(i);
        for &(j, r) in chain.transitions(i) {
            l[(i, j)] = -h[i] * r / h[j];
        }
    }
    let residual = linalg::asymmetry(l.as_ref());
    if residual > DETAILED_BALANCE_TOLERANCE {
        return Err(Error::AsymmetryResidual { residual });
    }
    SpectralLaplacian::from_symmetric(linalg::symmetric_part(l.as_ref()), h.to_vec())
}

impl SpectralLaplacian {
    /// Spectral data for a symmetric PSD `L` with known null vector `h`.
    pub fn from_symmetric(l: Mat<f64>, h: Vec<f64>) -> Result<Self> {
        let mut eigen = linalg::sym_eigen(l.as_ref())?;
        let lambda_max = eigen.values.last().copied().unwrap_or(0.0).max(0.0);
        let tau = NULL_TOLERANCE * lambda_max;
        if let Some(&lowest) = eigen.values.first() {
            if lowest < -tau {
                return Err(Error::NotPositiveSemidefinite { value: lowest });
            }
        }
        let zeros = eigen.values.iter().filter(|v| v.abs() <= tau).count();
        if zeros != 1 {
            return Err(Error::RankDeficiency { zeros });
        }
        eigen.values[0] = 0.0;
        let inv: Vec<f64> = eigen.values.iter().map(|&v| if v == 0.0 { 0.0 } else { 1.0 / v }).collect();
        let k = linalg::weighted_gram(eigen.vectors.as_ref(), &inv);
        Ok(Self { l, eigen, k, h, null_rank: zeros })
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn laplacian(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// `K = L⁺`.
    pub fn fundamental(&self) -> MatRef<'_, f64> {
        self.k.as_ref()
    }

    /// Eigenvalues of `L`, ascending; the first is exactly zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    pub fn eigenvectors(&self) -> MatRef<'_, f64> {
        self.eigen.vectors.as_ref()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn pi(&self) -> Vec<f64> {
        self.h.iter().map(|v| v * v).collect()
    }

    pub fn null_rank(&self) -> usize {
        self.null_rank
    }

    /// `Tr K`, the sum of inverse nonzero eigenvalues.
    pub fn trace_fundamental(&self) -> f64 {
        self.eigen.values.iter().filter(|&&v| v > 0.0).map(|v| 1.0 / v).sum()
    }

    /// `P(t) = U e^{−Λt} Uᵀ`.
    pub fn propagator(&self, t: f64) -> Result<Mat<f64>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.eigen.apply(|v| (-v * t).exp()))
    }

    /// `I − P(t)`, accurate for small `t`.
    pub fn propagator_complement(&self, t: f64) -> Result<Mat<f64>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.eigen.apply(|v| -(-v * t).exp_m1()))
    }

    /// Killed operators at rate `γ`.
    pub fn killed(&self, gamma: f64) -> Result<KilledOperators> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::NonPositiveGamma(gamma));
        }
        let n = self.n();
        let l_gamma = Mat::from_fn(n, n, |i, j| self.l[(i, j)] + if i == j { gamma } else { 0.0 });
        let k_gamma = self.eigen.apply(|v| 1.0 / (v + gamma));
        Ok(KilledOperators { gamma, l_gamma, k_gamma })
    }

    /// Log grid from `10⁻²` to `10³` times `Tr K / n`.
    pub fn default_time_grid(&self, points: usize) -> Vec<f64> {
        let unit = self.trace_fundamental() / self.n() as f64;
        linalg::log_grid(1e-2 * unit, 1e3 * unit, points)
    }
}

/// `L_γ = L + γI` and `K_γ = L_γ⁻¹`.
#[derive(Debug, Clone)]
pub struct KilledOperators {
    pub gamma: f64,
    pub l_gamma: Mat<f64>,
    pub k_gamma: Mat<f64>,
}

/// `P̃ = Diag⁻¹(h)·P·Diag(h)`.
pub fn unsymmetrize(p: MatRef<'_, f64>, h: &[f64]) -> Result<Mat<f64>> {
    if p.nrows() != h.len() || p.ncols() != h.len() {
        return Err(Error::ShapeMismatch { expected: format!("{0}x{0}", h.len()), found: format!("{}x{}", p.nrows(), p.ncols()) });
    }
    Ok(Mat::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] * h[j] / h[i]))
}

/// Spectral and nuclear norm of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    pub spectral: f64,
    pub nuclear: f64,
}

pub fn norms(a: MatRef<'_, f64>) -> Result<MatrixNorms> {
    let (spectral, nuclear) = linalg::spectral_nuclear(a)?;
    Ok(MatrixNorms { spectral, nuclear })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{k3, p2};
    use crate::linalg::max_abs_diff;
    use faer::mat;

    #[test]
    fn k3_stationary_is_uniform() {
        let c = k3();
        for p in c.stationary() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn p2_stationary_solved_from_rates() {
        let c = p2();
        assert!((c.stationary()[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((c.stationary()[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn explicit_stationary_violating_balance_is_rejected() {
        let err = build_chain(2, &[(0, 1, 1.0), (1, 0, 2.0)], Some(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::DetailedBalanceViolated { .. }));
    }

    #[test]
    fn non_reversible_rates_are_rejected() {
        let cycle = [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (1, 0, 0.5), (2, 1, 0.5), (0, 2, 0.5)];
        assert!(matches!(build_chain(3, &cycle, None), Err(Error::DetailedBalanceViolated { .. })));
    }

    #[test]
    fn disconnected_and_bad_inputs() {
        assert!(matches!(build_chain(3, &[(0, 1, 1.0), (1, 0, 1.0)], None), Err(Error::DisconnectedGraph { .. })));
        assert!(matches!(build_chain(2, &[(0, 1, -1.0)], None), Err(Error::InvalidRate { .. })));
        assert!(matches!(build_chain(2, &[(0, 2, 1.0)], None), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(build_chain(2, &[(0, 1, 1.0), (1, 0, 1.0)], Some(&[1.0, 0.0])), Err(Error::NonPositiveStationary { .. })));
    }

    #[test]
    fn webgraph_of_k3_has_half_rates() {
        let adj = [(0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)];
        let c = webgraph_chain(3, &adj).unwrap();
        let expected = mat![[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]];
        assert!(max_abs_diff(c.rate_matrix().as_ref(), expected.as_ref()) < 1e-15);
    }

    #[test]
    fn webgraph_path_stationary_follows_degree() {
        let adj = [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)];
        let c = webgraph_chain(3, &adj).unwrap();
        for (p, e) in c.stationary().iter().zip([0.25, 0.5, 0.25]) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn webgraph_errors() {
        let isolated = [(0, 1, 1.0), (1, 0, 1.0)];
        assert!(matches!(webgraph_chain(3, &isolated), Err(Error::DisconnectedGraph { .. })));
        assert!(matches!(webgraph_chain(2, &[(0, 1, 1.0)]), Err(Error::AsymmetricAdjacency { .. })));
    }

    #[test]
    fn k3_laplacian_and_spectrum() {
        let lap = symmetrize(&k3()).unwrap();
        let expected = mat![[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]];
        assert!(max_abs_diff(lap.laplacian(), expected.as_ref()) < 1e-15);
        let ev = lap.eigenvalues();
        assert_eq!(ev[0], 0.0);
        assert!((ev[1] - 3.0).abs() < 1e-13 && (ev[2] - 3.0).abs() < 1e-13);
        // K = (I − 11ᵀ/3) / 3.
        let k_expected = Mat::from_fn(3, 3, |i, j| (if i == j { 1.0 } else { 0.0 } - 1.0 / 3.0) / 3.0);
        assert!(max_abs_diff(lap.fundamental(), k_expected.as_ref()) < 1e-14);
    }

    #[test]
    fn p2_laplacian_by_hand() {
        let lap = symmetrize(&p2()).unwrap();
        let s2 = 2f64.sqrt();
        let expected = mat![[1.0, -s2], [-s2, 2.0]];
        assert!(max_abs_diff(lap.laplacian(), expected.as_ref()) < 1e-14);
        assert!((lap.eigenvalues()[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn propagator_limits() {
        let lap = symmetrize(&k3()).unwrap();
        let p0 = lap.propagator(0.0).unwrap();
        assert!(max_abs_diff(p0.as_ref(), Mat::<f64>::identity(3, 3).as_ref()) < 1e-14);
        let p_inf = lap.propagator(1e3).unwrap();
        let hh = Mat::from_fn(3, 3, |_, _| 1.0 / 3.0);
        assert!(max_abs_diff(p_inf.as_ref(), hh.as_ref()) < 1e-14);
        assert_eq!(lap.propagator(-1.0), Err(Error::NegativeTime(-1.0)));
    }

    #[test]
    fn p2_propagator_from_two_state_spectrum() {
        let lap = symmetrize(&p2()).unwrap();
        let p = lap.propagator(1.0).unwrap();
        // Basis h = (√(2/3), √(1/3)) and its orthogonal complement.
        let h = [(2.0f64 / 3.0).sqrt(), (1.0f64 / 3.0).sqrt()];
        let v = [h[1], -h[0]];
        let e3 = (-3.0f64).exp();
        let oracle = Mat::from_fn(2, 2, |i, j| h[i] * h[j] + e3 * v[i] * v[j]);
        assert!(max_abs_diff(p.as_ref(), oracle.as_ref()) < 1e-14);
        let pt = unsymmetrize(p.as_ref(), lap.h()).unwrap();
        for i in 0..2 {
            assert!((pt[(i, 0)] + pt[(i, 1)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn killed_operators() {
        let lap = symmetrize(&p2()).unwrap();
        assert_eq!(lap.killed(0.0).unwrap_err(), Error::NonPositiveGamma(0.0));
        let k = lap.killed(0.5).unwrap();
        let prod = &k.l_gamma * &k.k_gamma;
        assert!(max_abs_diff(prod.as_ref(), Mat::<f64>::identity(2, 2).as_ref()) < 1e-13);
        let ev = linalg::sym_eigenvalues(k.l_gamma.as_ref()).unwrap();
        assert!((ev[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn k3_fundamental_norms() {
        let lap = symmetrize(&k3()).unwrap();
        let nrm = norms(lap.fundamental()).unwrap();
        assert!((nrm.spectral - 1.0 / 3.0).abs() < 1e-14);
        assert!((nrm.nuclear - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_laplacian_is_rejected() {
        let l = Mat::<f64>::zeros(2, 2);
        assert!(matches!(SpectralLaplacian::from_symmetric(l, vec![0.5f64.sqrt(); 2]), Err(Error::RankDeficiency { zeros: 2 })));
    }
}
