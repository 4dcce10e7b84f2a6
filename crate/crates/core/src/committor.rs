//! Committors, hitting times and the stationary quantities they induce.
//!
//! The committor `C̃_{ij}` is the probability that the chain started at `i`
//! first enters the selected set at `j`. It is computed here two ways: a closed
//! form in the fundamental matrix `K` (the production path) and a linear solve
//! on the complement block of `R` (the oracle). The symmetrized committor
//! `C = Diag(h)·C̃·Diag⁻¹(ĥ)` is a contraction with `Cᵀh = ĥ`.

use faer::Mat;

use crate::chain::{KilledOperators, ReversibleChain, SpectralLaplacian};
use crate::error::{Error, Result};
use crate::linalg;
use crate::subset::IndexSet;

/// Committor of a selected set and its derived stationary quantities.
#[derive(Debug, Clone)]
pub struct CommittorBundle {
    pub set: IndexSet,
    /// `C̃`, `n × |I|`, rows are hitting distributions on `I`.
    pub committor: Mat<f64>,
    /// `C = Diag(h)·C̃·Diag⁻¹(ĥ)`.
    pub sym_committor: Mat<f64>,
    /// `π̂ = C̃ᵀπ`.
    pub pi_hat: Vec<f64>,
    /// `ĥ = √π̂`.
    pub h_hat: Vec<f64>,
    /// Mean time to reach `I` from a stationary start; zero when `I = [n]`.
    pub omega: f64,
    /// 2-norm condition number of `K_II` (1 when `I = [n]`).
    pub principal_condition: f64,
}

/// Factorized principal block `K_II` with the vectors every closed form needs.
#[derive(Debug, Clone)]
pub(crate) struct PrincipalBlock {
    pub k_ii: Mat<f64>,
    /// `K_II⁻¹`.
    pub inv: Mat<f64>,
    /// `K_II⁻¹ h_I`.
    pub a: Vec<f64>,
    /// `h_Iᵀ K_II⁻¹ h_I = 1/ω`.
    pub s: f64,
    pub h_i: Vec<f64>,
}

pub(crate) fn principal_block(lap: &SpectralLaplacian, set: &IndexSet) -> Result<PrincipalBlock> {
    debug_assert!(!set.is_full());
    let idx = set.members();
    let k_ii = linalg::submatrix(lap.fundamental(), idx, idx);
    let inv = linalg::spd_inverse(k_ii.as_ref()).ok_or(Error::SingularPrincipalBlock)?;
    let h_i: Vec<f64> = idx.iter().map(|&i| lap.h()[i]).collect();
    let a = linalg::mat_vec(inv.as_ref(), &h_i);
    let s = linalg::dot(&h_i, &a);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::SingularPrincipalBlock);
    }
    Ok(PrincipalBlock { k_ii, inv, a, s, h_i })
}

fn check_set(n: usize, set: &IndexSet) -> Result<()> {
    if set.n() != n {
        return Err(Error::ShapeMismatch { expected: format!("index set over {n} states"), found: set.n().to_string() });
    }
    Ok(())
}

/// Committor from the fundamental matrix.
///
/// `C̃ = Diag⁻¹(h)·[(h − K_{:,I}K_II⁻¹h_I)·h_Iᵀ/(h_IᵀK_II⁻¹h_I) + K_{:,I}]·K_II⁻¹·Diag(h_I)`.
pub fn committor_closed_form(lap: &SpectralLaplacian, set: &IndexSet) -> Result<CommittorBundle> {
    check_set(lap.n(), set)?;
    let n = lap.n();
    let h = lap.h();
    if set.is_full() {
        let eye = Mat::<f64>::identity(n, n);
        return Ok(CommittorBundle {
            set: set.clone(),
            committor: eye.clone(),
            sym_committor: eye,
            pi_hat: lap.pi(),
            h_hat: h.to_vec(),
            omega: 0.0,
            principal_condition: 1.0,
        });
    }
    let block = principal_block(lap, set)?;
    let idx = set.members();
    let k = lap.fundamental();
    let k_ci = linalg::submatrix(k, &(0..n).collect::<Vec<_>>(), idx);
    let b = &k_ci * &block.inv;
    let bh = linalg::mat_vec(b.as_ref(), &block.h_i);
    let committor = Mat::from_fn(n, idx.len(), |i, j| ((h[i] - bh[i]) * block.a[j] / block.s + b[(i, j)]) * block.h_i[j] / h[i]);
    let pi_hat: Vec<f64> = (0..idx.len()).map(|j| block.h_i[j] * block.a[j] / block.s).collect();
    if pi_hat.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularPrincipalBlock);
    }
    let h_hat: Vec<f64> = pi_hat.iter().map(|p| p.sqrt()).collect();
    let inv_h_hat: Vec<f64> = h_hat.iter().map(|v| 1.0 / v).collect();
    let sym_committor = linalg::diag_scale(h, committor.as_ref(), &inv_h_hat);
    let principal_condition = linalg::spd_condition(block.k_ii.as_ref())?;
    Ok(CommittorBundle { set: set.clone(), committor, sym_committor, pi_hat, h_hat, omega: 1.0 / block.s, principal_condition })
}

/// Committor by solving `R_{ĪĪ}·X = −R_{ĪI}` with identity rows on `I`.
pub fn committor_absorbing_solve(chain: &ReversibleChain, set: &IndexSet) -> Result<Mat<f64>> {
    check_set(chain.n(), set)?;
    let n = chain.n();
    let idx = set.members();
    let comp = set.complement();
    let mut out = Mat::<f64>::zeros(n, idx.len());
    for (p, &i) in idx.iter().enumerate() {
        out[(i, p)] = 1.0;
    }
    if comp.is_empty() {
        return Ok(out);
    }
    let r = chain.rate_matrix();
    let r_cc = linalg::submatrix(r.as_ref(), comp, comp);
    let rhs = Mat::from_fn(comp.len(), idx.len(), |a, b| -r[(comp[a], idx[b])]);
    let x = linalg::lu_solve(r_cc.as_ref(), rhs.as_ref()).ok_or(Error::SingularComplementBlock)?;
    for (a, &c) in comp.iter().enumerate() {
        for b in 0..idx.len() {
            out[(c, b)] = x[(a, b)];
        }
    }
    Ok(out)
}

/// Expected time to reach `I` from every state (zero on `I`), by solving
/// `−R_{ĪĪ}·m = 1`.
pub fn mean_absorption_times(chain: &ReversibleChain, set: &IndexSet) -> Result<Vec<f64>> {
    check_set(chain.n(), set)?;
    let comp = set.complement();
    let mut out = vec![0.0; chain.n()];
    if comp.is_empty() {
        return Ok(out);
    }
    let r = chain.rate_matrix();
    let neg = Mat::from_fn(comp.len(), comp.len(), |a, b| -r[(comp[a], comp[b])]);
    let ones = Mat::from_fn(comp.len(), 1, |_, _| 1.0);
    let m = linalg::lu_solve(neg.as_ref(), ones.as_ref()).ok_or(Error::SingularComplementBlock)?;
    for (a, &c) in comp.iter().enumerate() {
        out[c] = m[(a, 0)];
    }
    Ok(out)
}

/// `ω = E[τ_I]` from a stationary start, `(h_IᵀK_II⁻¹h_I)⁻¹`; zero for `I = [n]`.
pub fn mean_marking_time(lap: &SpectralLaplacian, set: &IndexSet) -> Result<f64> {
    check_set(lap.n(), set)?;
    if set.is_full() {
        return Ok(0.0);
    }
    Ok(1.0 / principal_block(lap, set)?.s)
}

/// Committor of the chain killed at rate `γ`, with its (substochastic)
/// stationary image.
#[derive(Debug, Clone)]
pub struct KilledCommittor {
    pub gamma: f64,
    /// `C̃_γ = Diag⁻¹(h)(K_γ)_{:,I}(K_γ)_II⁻¹Diag(h_I)`.
    pub committor: Mat<f64>,
    /// `C_γ = Diag(h)·C̃_γ·Diag⁻¹(ĥ_γ)`.
    pub sym_committor: Mat<f64>,
    /// `π̂_γ = C̃_γᵀπ`.
    pub pi_hat: Vec<f64>,
    pub h_hat: Vec<f64>,
}

pub fn killed_committor(killed: &KilledOperators, h: &[f64], set: &IndexSet) -> Result<KilledCommittor> {
    if !(killed.gamma > 0.0) {
        return Err(Error::NonPositiveGamma(killed.gamma));
    }
    let n = h.len();
    check_set(n, set)?;
    let idx = set.members();
    let committor = if set.is_full() {
        Mat::<f64>::identity(n, n)
    } else {
        let kg = killed.k_gamma.as_ref();
        let block = linalg::submatrix(kg, idx, idx);
        let inv = linalg::spd_inverse(block.as_ref()).ok_or(Error::SingularPrincipalBlock)?;
        let cols = linalg::submatrix(kg, &(0..n).collect::<Vec<_>>(), idx);
        let b = &cols * &inv;
        Mat::from_fn(n, idx.len(), |i, j| b[(i, j)] * h[idx[j]] / h[i])
    };
    let pi: Vec<f64> = h.iter().map(|v| v * v).collect();
    let pi_hat: Vec<f64> = (0..idx.len()).map(|j| (0..n).map(|i| committor[(i, j)] * pi[i]).sum()).collect();
    let h_hat: Vec<f64> = pi_hat.iter().map(|p| p.sqrt()).collect();
    let inv_h_hat: Vec<f64> = h_hat.iter().map(|v| 1.0 / v).collect();
    let sym_committor = linalg::diag_scale(h, committor.as_ref(), &inv_h_hat);
    Ok(KilledCommittor { gamma: killed.gamma, committor, sym_committor, pi_hat, h_hat })
}

/// Mean first passage times.
#[derive(Debug, Clone)]
pub struct HittingTimes {
    /// `H_ij = E[τ_j | X_0 = i]`.
    pub times: Mat<f64>,
    /// `S = Diag⁻¹(h)·K·Diag⁻¹(h)`.
    pub scaled: Mat<f64>,
}

/// `H = 1·Diag(S)ᵀ − S`.
pub fn hitting_times(lap: &SpectralLaplacian) -> HittingTimes {
    let n = lap.n();
    let inv_h: Vec<f64> = lap.h().iter().map(|v| 1.0 / v).collect();
    let scaled = linalg::diag_scale(&inv_h, lap.fundamental(), &inv_h);
    let times = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { scaled[(j, j)] - scaled[(i, j)] });
    HittingTimes { times, scaled }
}
