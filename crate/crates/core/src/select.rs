//! Greedy state selection by nuclear maximization.
//!
//! Each step adds the state whose inclusion lowers `ε*(I) = Tr[(L_ĪĪ)⁻¹]` the
//! most. With `M = (L_ĪĪ)⁻¹`, removing `i` from the complement leaves
//! `Tr M − ‖M_{:,i}‖²/M_ii`, so all candidate scores come from one pass over
//! `M` and the update is a rank-one Schur downdate. The first step is special
//! because `ε*(∅)` diverges; there `ε*({i}) = Tr K + K_ii/h_i²` is compared
//! directly.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::SpectralLaplacian;
use crate::compress::{nystrom_spectral, obliqueness, NormMethod};
use crate::error::{Error, Result};
use crate::linalg;
use crate::subset::IndexSet;

/// Steps between full refactorizations of `M`.
pub const REFACTOR_EVERY: usize = 25;
/// Scores within this relative distance of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;
pub const BRUTE_FORCE_MAX_N: usize = 16;
pub const BRUTE_FORCE_MAX_S: usize = 4;

/// Greedy selection in order, with the error after every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub ordered: Vec<usize>,
    /// `ε*(I_j)` after step `j`.
    pub eps_nuc: Vec<f64>,
    /// Winning score per step. The first entry is `−K_ii/h_i²`, the
    /// singleton score up to the constant `Tr K`.
    pub scores: Vec<f64>,
    /// Sum of the eigenvalues of `K` beyond the largest `j + 1`.
    pub spectral_lower_bound: Vec<f64>,
}

impl SelectionTrace {
    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    /// The first `k` selected states as a set.
    pub fn prefix(&self, n: usize, k: usize) -> Result<IndexSet> {
        IndexSet::new(n, &self.ordered[..k.min(self.ordered.len())])
    }
}

/// Eigenvalues of `K`, descending; the last is the zero of the null vector.
pub fn fundamental_spectrum(lap: &SpectralLaplacian) -> Vec<f64> {
    let mut out: Vec<f64> = lap.eigenvalues().iter().map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// `Σ_{i > k+1} λ_i(K)` for `k = 1..=k_max`.
pub fn spectral_lower_bounds(spectrum_desc: &[f64], k_max: usize) -> Vec<f64> {
    (1..=k_max).map(|k| spectrum_desc.iter().skip(k + 1).sum()).collect()
}

/// `−ε*({i})` shifted by `Tr K`, i.e. `−K_ii/h_i²`.
pub fn first_index_scores(lap: &SpectralLaplacian) -> Vec<f64> {
    let k = lap.fundamental();
    lap.h().iter().enumerate().map(|(i, &h)| -k[(i, i)] / (h * h)).collect()
}

/// `ε*({i}) = Tr K + K_ii/h_i²`.
pub fn singleton_error(lap: &SpectralLaplacian, i: usize) -> f64 {
    let h = lap.h()[i];
    lap.trace_fundamental() + lap.fundamental()[(i, i)] / (h * h)
}

/// `ε*(I) = Tr[(L_ĪĪ)⁻¹]` from scratch.
pub fn schur_trace(lap: &SpectralLaplacian, set: &IndexSet) -> Result<f64> {
    if set.is_full() {
        return Ok(0.0);
    }
    let comp = set.complement();
    let block = linalg::submatrix(lap.laplacian(), comp, comp);
    let inv = linalg::spd_inverse(block.as_ref()).ok_or(Error::SingularComplementBlock)?;
    Ok(linalg::trace(inv.as_ref()))
}

/// First position of the maximum, treating near-equal scores as ties.
fn argmax_lowest(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best - TIE_TOLERANCE * best.abs().max(f64::MIN_POSITIVE);
    scores.iter().position(|&v| v >= cutoff).expect("non-empty score vector")
}

fn complement_inverse(lap: &SpectralLaplacian, comp: &[usize]) -> Result<Mat<f64>> {
    let block = linalg::submatrix(lap.laplacian(), comp, comp);
    linalg::spd_inverse(block.as_ref()).ok_or(Error::SingularComplementBlock)
}

/// Greedy nuclear maximization for `k` states.
pub fn greedy_select(lap: &SpectralLaplacian, k: usize) -> Result<SelectionTrace> {
    let n = lap.n();
    if k == 0 || k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let first_scores = first_index_scores(lap);
    let first = argmax_lowest(&first_scores);
    let mut ordered = vec![first];
    let mut eps_nuc = vec![singleton_error(lap, first)];
    let mut scores = vec![first_scores[first]];

    let mut comp: Vec<usize> = (0..n).filter(|&i| i != first).collect();
    let mut m = complement_inverse(lap, &comp)?;
    for step in 1..k {
        let size = comp.len();
        let mref = m.as_ref();
        let cand: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|p| {
                let col = mref.col(p);
                let sq: f64 = (0..size).map(|q| col[q] * col[q]).sum();
                sq / col[p]
            })
            .collect();
        let p = argmax_lowest(&cand);
        let pivot = m[(p, p)];
        let keep: Vec<usize> = (0..size).filter(|&q| q != p).collect();
        ordered.push(comp[p]);
        scores.push(cand[p]);
        comp.remove(p);
        m = if (step + 1) % REFACTOR_EVERY == 0 {
            complement_inverse(lap, &comp)?
        } else {
            let mref = m.as_ref();
            Mat::from_fn(keep.len(), keep.len(), |a, b| {
                let (qa, qb) = (keep[a], keep[b]);
                mref[(qa, qb)] - mref[(qa, p)] * mref[(p, qb)] / pivot
            })
        };
        eps_nuc.push(linalg::trace(m.as_ref()));
    }
    let spectral_lower_bound = spectral_lower_bounds(&fundamental_spectrum(lap), k);
    Ok(SelectionTrace { ordered, eps_nuc, scores, spectral_lower_bound })
}

/// Exhaustive minimizer of `ε*` over `s`-subsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalSubset {
    pub s: usize,
    pub indices: Vec<usize>,
    pub eps_nuc: f64,
}

/// Minimum of `ε*` over all `s`-subsets, lowest lexicographic subset on ties.
pub fn brute_force_optimal(lap: &SpectralLaplacian, s: usize) -> Result<OptimalSubset> {
    let n = lap.n();
    if s == 0 || s >= n {
        return Err(Error::KTooLarge { k: s, n });
    }
    if s > BRUTE_FORCE_MAX_S || n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLargeForBruteForce { n, s });
    }
    let mut subsets = Vec::new();
    let mut current: Vec<usize> = (0..s).collect();
    loop {
        subsets.push(current.clone());
        let Some(pos) = (0..s).rev().find(|&p| current[p] < n - s + p) else { break };
        current[pos] += 1;
        for q in pos + 1..s {
            current[q] = current[q - 1] + 1;
        }
    }
    let values: Vec<f64> = subsets.par_iter().map(|sub| IndexSet::new(n, sub).and_then(|set| schur_trace(lap, &set))).collect::<Result<_>>()?;
    let best = argmin_lowest(&values);
    Ok(OptimalSubset { s, indices: subsets[best].clone(), eps_nuc: values[best] })
}

fn argmin_lowest(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = best + TIE_TOLERANCE * best.abs();
    values.iter().position(|&v| v <= cutoff).expect("non-empty")
}

/// `(ε*(I_k) − ε*(O_s))/Tr K − 2e^{−(k−1)/s}`; nonpositive when the
/// optimality guarantee holds.
pub fn optimality_margin(trace: &SelectionTrace, k: usize, optimal: &OptimalSubset, trace_k: f64) -> Result<f64> {
    if k == 0 || k > trace.len() {
        return Err(Error::KTooLarge { k, n: trace.len() + 1 });
    }
    if optimal.s > k {
        return Err(Error::InvalidArgument(format!("subset size {} exceeds k = {k}", optimal.s)));
    }
    let lhs = (trace.eps_nuc[k - 1] - optimal.eps_nuc) / trace_k;
    Ok(lhs - 2.0 * (-((k - 1) as f64) / optimal.s as f64).exp())
}

/// `2·Tr K·e^{−(k−1)/s} + (s+1)/(s−r)·(Tr K − Tr⁽ʳ⁾K) − ε*(I_k)`; nonnegative
/// when the spectral guarantee holds.
pub fn spectral_slack(trace: &SelectionTrace, spectrum_desc: &[f64], k: usize, s: usize, r: usize) -> Result<f64> {
    if !(r < s && s <= k) {
        return Err(Error::InvalidRsk { r, s, k });
    }
    if k > trace.len() {
        return Err(Error::KTooLarge { k, n: trace.len() + 1 });
    }
    let total: f64 = spectrum_desc.iter().sum();
    let top: f64 = spectrum_desc.iter().take(r).sum();
    let bound = 2.0 * total * (-((k - 1) as f64) / s as f64).exp() + (s + 1) as f64 / (s - r) as f64 * (total - top);
    Ok(bound - trace.eps_nuc[k - 1])
}

/// Errors and obliqueness of the first `k` greedy states.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionCurvePoint {
    pub k: usize,
    pub chosen: usize,
    pub eps2: f64,
    pub eps_nuc: f64,
    pub psi2: f64,
    pub psi_nuc: f64,
    pub spectral_lower_bound: f64,
}

/// One curve point per prefix of the trace.
pub fn selection_curves(lap: &SpectralLaplacian, trace: &SelectionTrace, method: NormMethod) -> Result<Vec<SelectionCurvePoint>> {
    let n = lap.n();
    (1..=trace.len())
        .into_par_iter()
        .map(|k| {
            let set = trace.prefix(n, k)?;
            let psi = obliqueness(lap, &set)?;
            Ok(SelectionCurvePoint {
                k,
                chosen: trace.ordered[k - 1],
                eps2: nystrom_spectral(lap, &set, method)?,
                eps_nuc: trace.eps_nuc[k - 1],
                psi2: psi.psi2,
                psi_nuc: psi.psi_nuc,
                spectral_lower_bound: trace.spectral_lower_bound[k - 1],
            })
        })
        .collect()
}
