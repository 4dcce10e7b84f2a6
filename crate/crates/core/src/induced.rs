//! The induced chain on a selected set.
//!
//! Watching the original chain only at its visits to `I` gives a reversible
//! chain on `I` with rates `R̂ = C̃^♯·R·C̃`, where `C̃^♯ = Diag⁻¹(π̂)·C̃ᵀ·Diag(π)`
//! is the `π`-adjoint of the committor. Its stationary distribution is `π̂`,
//! and its Laplacian `L̂ = CᵀLC` drives the structure-preserving compression.
//!
//! Two constructions are provided (from the committor and from `K` alone) so
//! that each can serve as the other's oracle, plus checks of the chain's
//! probabilistic meaning against linear-algebra and Monte-Carlo references.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::chain::{ReversibleChain, SpectralLaplacian};
use crate::committor::{self, principal_block, CommittorBundle};
use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};
use crate::simulate;
use crate::subset::IndexSet;

/// Reversible chain on `I`.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub set: IndexSet,
    /// `R̂`, `|I| × |I|`.
    pub rates: Mat<f64>,
    pub pi_hat: Vec<f64>,
    pub h_hat: Vec<f64>,
    /// `L̂ = −Diag(ĥ)·R̂·Diag⁻¹(ĥ)`.
    pub laplacian: Mat<f64>,
    /// `K̂ = L̂⁺`.
    pub fundamental: Mat<f64>,
    /// Eigendecomposition of `L̂` (first eigenvalue exactly zero).
    pub eigen: SymEigen,
    pub omega: f64,
}

impl InducedChain {
    /// Stationary flow `Δ̂ = −Diag(π̂)·R̂`.
    pub fn flow(&self) -> Mat<f64> {
        let neg: Vec<f64> = self.pi_hat.iter().map(|p| -p).collect();
        linalg::scale_rows(&neg, self.rates.as_ref())
    }

    /// Mean first passage times of the induced chain.
    pub fn hitting_times(&self) -> Mat<f64> {
        let inv: Vec<f64> = self.h_hat.iter().map(|v| 1.0 / v).collect();
        let s = linalg::diag_scale(&inv, self.fundamental.as_ref(), &inv);
        let k = self.set.len();
        Mat::from_fn(k, k, |i, j| if i == j { 0.0 } else { s[(j, j)] - s[(i, j)] })
    }

    /// `e^{−L̂t}`.
    pub fn propagator(&self, t: f64) -> Result<Mat<f64>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.eigen.apply(|v| (-v * t).exp()))
    }

    /// `R̂` with entries below `1e−13·max|R̂|` set to zero, for export.
    pub fn export_rates(&self) -> Mat<f64> {
        let cut = 1e-13 * linalg::max_abs(self.rates.as_ref());
        Mat::from_fn(self.rates.nrows(), self.rates.ncols(), |i, j| {
            let v = self.rates[(i, j)];
            if v.abs() < cut {
                0.0
            } else {
                v
            }
        })
    }
}

fn spectral_parts(laplacian: Mat<f64>, h_hat: &[f64]) -> Result<(Mat<f64>, SymEigen, Mat<f64>)> {
    let k = laplacian.nrows();
    if k == 1 {
        let zero = Mat::<f64>::zeros(1, 1);
        let eigen = SymEigen { values: vec![0.0], vectors: Mat::from_fn(1, 1, |_, _| 1.0) };
        return Ok((zero.clone(), eigen, zero));
    }
    let spec = SpectralLaplacian::from_symmetric(laplacian, h_hat.to_vec())?;
    Ok((spec.laplacian().to_owned(), spec.eigen().clone(), spec.fundamental().to_owned()))
}

/// `R̂ = C̃^♯·R·C̃` from a committor bundle.
pub fn induced_chain(chain: &ReversibleChain, bundle: &CommittorBundle) -> Result<InducedChain> {
    let set = bundle.set.clone();
    let k = set.len();
    let pi = chain.stationary();
    let rc = chain.apply_rates(bundle.committor.as_ref());
    let weighted = linalg::scale_rows(pi, bundle.committor.as_ref());
    let flow = weighted.transpose() * &rc;
    let inv_pi_hat: Vec<f64> = bundle.pi_hat.iter().map(|p| 1.0 / p).collect();
    let mut rates = linalg::scale_rows(&inv_pi_hat, flow.as_ref());
    if k == 1 {
        rates[(0, 0)] = 0.0;
    }
    let inv_h_hat: Vec<f64> = bundle.h_hat.iter().map(|v| 1.0 / v).collect();
    let neg_flow = Mat::from_fn(k, k, |i, j| -flow[(i, j)]);
    let lap_hat = linalg::symmetric_part(linalg::diag_scale(&inv_h_hat, neg_flow.as_ref(), &inv_h_hat).as_ref());
    let (laplacian, eigen, fundamental) = spectral_parts(lap_hat, &bundle.h_hat)?;
    Ok(InducedChain { set, rates, pi_hat: bundle.pi_hat.clone(), h_hat: bundle.h_hat.clone(), laplacian, fundamental, eigen, omega: bundle.omega })
}

/// Induced chain from the principal block of `K` alone.
pub fn induced_from_k(lap: &SpectralLaplacian, set: &IndexSet) -> Result<InducedChain> {
    let n = lap.n();
    if set.n() != n {
        return Err(Error::ShapeMismatch { expected: format!("index set over {n} states"), found: set.n().to_string() });
    }
    if set.is_full() {
        let h = lap.h();
        let l = lap.laplacian();
        let rates = Mat::from_fn(n, n, |i, j| -l[(i, j)] * h[j] / h[i]);
        return Ok(InducedChain {
            set: set.clone(),
            rates,
            pi_hat: lap.pi(),
            h_hat: h.to_vec(),
            laplacian: l.to_owned(),
            fundamental: lap.fundamental().to_owned(),
            eigen: lap.eigen().clone(),
            omega: 0.0,
        });
    }
    let block = principal_block(lap, set)?;
    let k = set.len();
    let omega = 1.0 / block.s;
    let h_i = &block.h_i;
    let pi_hat: Vec<f64> = (0..k).map(|j| omega * h_i[j] * block.a[j]).collect();
    if pi_hat.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularPrincipalBlock);
    }
    let h_hat: Vec<f64> = pi_hat.iter().map(|p| p.sqrt()).collect();
    if k == 1 {
        let zero = Mat::<f64>::zeros(1, 1);
        let eigen = SymEigen { values: vec![0.0], vectors: Mat::from_fn(1, 1, |_, _| 1.0) };
        return Ok(InducedChain { set: set.clone(), rates: zero.clone(), pi_hat, h_hat, laplacian: zero.clone(), fundamental: zero, eigen, omega });
    }
    let inv = &block.inv;
    let rates = Mat::from_fn(k, k, |i, j| pi_hat[j] / omega - h_i[i] / pi_hat[i] * inv[(i, j)] * h_i[j]);
    let ratio: Vec<f64> = (0..k).map(|i| h_i[i] / h_hat[i]).collect();
    let laplacian = Mat::from_fn(k, k, |i, j| ratio[i] * inv[(i, j)] * ratio[j] - h_hat[i] * h_hat[j] / omega);
    let fundamental = Mat::from_fn(k, k, |i, j| block.k_ii[(i, j)] / (ratio[i] * ratio[j]) - omega * h_hat[i] * h_hat[j]);
    let laplacian = linalg::symmetric_part(laplacian.as_ref());
    let fundamental = linalg::symmetric_part(fundamental.as_ref());
    let eigen = spectral_parts(laplacian.clone(), &h_hat)?.1;
    Ok(InducedChain { set: set.clone(), rates, pi_hat, h_hat, laplacian, fundamental, eigen, omega })
}

/// Opt-in Monte-Carlo settings for [`interpretation_checks`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trajectories: usize,
    pub seed: u64,
}

/// One Monte-Carlo comparison: estimate, its standard error and the exact value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McComparison {
    pub label: String,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: f64,
    pub passed: bool,
}

/// Result of checking what the induced rates mean for the original chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpretationReport {
    /// `max_i |−1/R̂_ii − E[τ_{I∖i} | X_0 = i]|`, relative to the largest time.
    pub exit_time_deviation: f64,
    /// `max_{i≠j} |−R̂_ij/R̂_ii − P(X_{τ_{I∖i}} = j | X_0 = i)|`.
    pub jump_probability_deviation: f64,
    /// `max_i |π̂_i − P(X_{τ_I} = i)|` for a stationary start.
    pub stationary_deviation: f64,
    pub tolerance: f64,
    pub monte_carlo: Vec<McComparison>,
    pub passed: bool,
}

/// Check the three probabilistic characterizations of `R̂` and `π̂`.
///
/// Exit times and jump probabilities of the induced chain are compared with
/// absorbing-block solves on the original chain (needs `|I| > 1`); `π̂` is
/// compared with `C̃ᵀπ` from the absorbing committor. With `mc` set, the
/// same quantities are also estimated from sampled paths and accepted within
/// three standard errors.
pub fn interpretation_checks(chain: &ReversibleChain, ic: &InducedChain, mc: Option<MonteCarloConfig>) -> Result<InterpretationReport> {
    const TOLERANCE: f64 = 1e-8;
    let members = ic.set.members().to_vec();
    let k = members.len();
    let n = chain.n();
    let mut exit_dev = 0.0f64;
    let mut exit_scale = 0.0f64;
    let mut jump_dev = 0.0f64;
    let mut monte_carlo = Vec::new();
    if k > 1 {
        for (p, &i) in members.iter().enumerate() {
            let others: Vec<usize> = members.iter().copied().filter(|&m| m != i).collect();
            let target = IndexSet::new(n, &others)?;
            let times = committor::mean_absorption_times(chain, &target)?;
            let hit = committor::committor_absorbing_solve(chain, &target)?;
            let exit_time = -1.0 / ic.rates[(p, p)];
            exit_dev = exit_dev.max((exit_time - times[i]).abs());
            exit_scale = exit_scale.max(times[i].abs());
            for (q, &j) in members.iter().enumerate() {
                if q == p {
                    continue;
                }
                let pos = target.position(j).expect("j is a target");
                let prob = -ic.rates[(p, q)] / ic.rates[(p, p)];
                jump_dev = jump_dev.max((prob - hit[(i, pos)]).abs());
            }
            if let Some(cfg) = mc {
                let targets: Vec<bool> = (0..n).map(|s| target.contains(s)).collect();
                let est = simulate::estimate_first_passage(chain, i, &targets, cfg.trajectories, cfg.seed.wrapping_add(p as u64))?;
                monte_carlo.push(McComparison {
                    label: format!("exit time from state {i}"),
                    estimate: est.time.mean,
                    stderr: est.time.stderr,
                    exact: exit_time,
                    passed: est.time.within(exit_time, 3.0),
                });
                for (q, &j) in members.iter().enumerate() {
                    if q == p {
                        continue;
                    }
                    let e = &est.hit[j];
                    let prob = -ic.rates[(p, q)] / ic.rates[(p, p)];
                    monte_carlo.push(McComparison {
                        label: format!("jump {i} -> {j}"),
                        estimate: e.mean,
                        stderr: e.stderr,
                        exact: prob,
                        passed: e.within(prob, 3.0),
                    });
                }
            }
        }
    }
    let exit_time_deviation = if exit_scale > 0.0 { exit_dev / exit_scale } else { exit_dev };
    let c_abs = committor::committor_absorbing_solve(chain, &ic.set)?;
    let pi = chain.stationary();
    let mut stationary_deviation = 0.0f64;
    for q in 0..k {
        let v: f64 = (0..n).map(|s| c_abs[(s, q)] * pi[s]).sum();
        stationary_deviation = stationary_deviation.max((v - ic.pi_hat[q]).abs());
    }
    let passed = exit_time_deviation <= TOLERANCE && jump_dev <= TOLERANCE && stationary_deviation <= TOLERANCE && monte_carlo.iter().all(|m| m.passed);
    Ok(InterpretationReport { exit_time_deviation, jump_probability_deviation: jump_dev, stationary_deviation, tolerance: TOLERANCE, monte_carlo, passed })
}

/// Deviation between induced and original hitting times on `I × I`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HittingPreservation {
    pub max_deviation: f64,
    pub max_hitting_time: f64,
}

impl HittingPreservation {
    pub fn relative(&self) -> f64 {
        if self.max_hitting_time > 0.0 {
            self.max_deviation / self.max_hitting_time
        } else {
            self.max_deviation
        }
    }
}

/// `max |Ĥ_ij − H_ij|` over `i, j ∈ I`.
pub fn hitting_preservation(lap: &SpectralLaplacian, ic: &InducedChain) -> HittingPreservation {
    let members = ic.set.members();
    let h = lap.h();
    let k = lap.fundamental();
    let s = |a: usize, b: usize| k[(members[a], members[b])] / (h[members[a]] * h[members[b]]);
    let h_hat = ic.hitting_times();
    let mut max_deviation = 0.0f64;
    let mut max_hitting_time = 0.0f64;
    for a in 0..members.len() {
        for b in 0..members.len() {
            if a == b {
                continue;
            }
            let original = s(b, b) - s(a, b);
            max_hitting_time = max_hitting_time.max(original.abs());
            max_deviation = max_deviation.max((h_hat[(a, b)] - original).abs());
        }
    }
    HittingPreservation { max_deviation, max_hitting_time }
}

/// `max |C̃ᵀDiag(π)(I − P̃(t))C̃/t − Δ̂|`, which vanishes linearly as `t → 0`.
pub fn flow_limit_check(lap: &SpectralLaplacian, bundle: &CommittorBundle, ic: &InducedChain, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let g = linalg::scale_rows(lap.h(), bundle.committor.as_ref());
    let ug = lap.eigenvectors().transpose() * &g;
    let w: Vec<f64> = lap.eigenvalues().iter().map(|&v| -(-v * t).exp_m1() / t).collect();
    let weighted = linalg::scale_rows(&w, ug.as_ref());
    let finite = linalg::symmetric_part((ug.transpose() * &weighted).as_ref());
    Ok(linalg::max_abs_diff(finite.as_ref(), ic.flow().as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::symmetrize;
    use crate::committor::committor_closed_form;
    use crate::fixtures::{k3, p2, random_reversible};
    use crate::linalg::max_abs_diff;
    use faer::mat;

    fn k3_pair() -> (ReversibleChain, SpectralLaplacian, CommittorBundle) {
        let chain = k3();
        let lap = symmetrize(&chain).unwrap();
        let bundle = committor_closed_form(&lap, &IndexSet::new(3, &[0, 1]).unwrap()).unwrap();
        (chain, lap, bundle)
    }

    #[test]
    fn k3_induced_rates() {
        let (chain, lap, bundle) = k3_pair();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let expected = mat![[-1.0, 1.0], [1.0, -1.0]];
        assert!(max_abs_diff(ic.rates.as_ref(), expected.as_ref()) < 1e-14);
        let from_k = induced_from_k(&lap, &bundle.set).unwrap();
        assert!(max_abs_diff(from_k.rates.as_ref(), expected.as_ref()) < 1e-13);
        let prod = &from_k.laplacian * &from_k.fundamental;
        let target = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 } - from_k.h_hat[i] * from_k.h_hat[j]);
        assert!(max_abs_diff(prod.as_ref(), target.as_ref()) < 1e-13);
    }

    #[test]
    fn full_set_reproduces_original() {
        for chain in [p2(), random_reversible(7, 1)] {
            let lap = symmetrize(&chain).unwrap();
            let set = IndexSet::full(chain.n());
            let bundle = committor_closed_form(&lap, &set).unwrap();
            let ic = induced_chain(&chain, &bundle).unwrap();
            assert!(max_abs_diff(ic.rates.as_ref(), chain.rate_matrix().as_ref()) < 1e-13);
        }
    }

    #[test]
    fn single_state_is_trivial() {
        let chain = random_reversible(6, 9);
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(6, &[4]).unwrap();
        let ic = induced_from_k(&lap, &set).unwrap();
        assert_eq!(ic.rates[(0, 0)], 0.0);
        assert!((ic.pi_hat[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn k3_interpretations() {
        let (chain, _, bundle) = k3_pair();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let report = interpretation_checks(&chain, &ic, None).unwrap();
        assert!(report.passed, "{report:?}");
        assert!((ic.pi_hat[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn k3_hitting_preserved() {
        let (chain, lap, bundle) = k3_pair();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let dev = hitting_preservation(&lap, &ic);
        assert!(dev.max_deviation < 1e-13);
        assert!((ic.hitting_times()[(0, 1)] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn flow_limit_is_first_order() {
        let (chain, lap, bundle) = k3_pair();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let r1 = flow_limit_check(&lap, &bundle, &ic, 1e-4).unwrap();
        let r2 = flow_limit_check(&lap, &bundle, &ic, 5e-5).unwrap();
        assert!(r1 <= 1e-3);
        assert!((r2 / r1 - 0.5).abs() < 0.05, "{r1} {r2}");
    }
}
