//! The marked chain: the original chain labelled by its last visit to `I`.
//!
//! Augmented states are `(marking, position)` pairs. Marked states
//! `(i, i)`, `i ∈ I`, come first in `I` order, followed by unmarked states
//! `(i, j)`, `j ∉ I`, in lexicographic order of (marking, position). States
//! that no marked state can reach are pruned, leaving one essential class
//! with a strictly positive stationary distribution.
//!
//! Projecting onto positions recovers the original chain; projecting onto
//! markings recovers the induced chain. The checks below verify both
//! directions numerically.

use std::collections::VecDeque;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{ReversibleChain, SpectralLaplacian};
use crate::committor::{killed_committor, CommittorBundle, KilledCommittor};
use crate::error::{Error, Result};
use crate::induced::InducedChain;
use crate::linalg;
use crate::subset::IndexSet;

/// Marked chain restricted to the states reachable from `I`.
#[derive(Debug, Clone)]
pub struct MarkedChain {
    set: IndexSet,
    /// `(marking position in I, original state)` per kept state.
    labels: Vec<(usize, usize)>,
    /// Kept index per unpruned augmented index.
    kept: Vec<Option<usize>>,
    pruned: Vec<(usize, usize)>,
    rows: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
    unpruned_rows: Vec<Vec<(usize, f64)>>,
    pi: Vec<f64>,
    h: Vec<f64>,
}

fn unpruned_index(set: &IndexSet, marking: usize, position: usize) -> usize {
    match set.position(position) {
        Some(p) => p,
        None => {
            let k = set.len();
            let c = set.complement();
            let q = c.binary_search(&position).expect("position outside I");
            k + marking * c.len() + q
        }
    }
}

/// Builds the marked chain of `bundle.set` and prunes unreachable states.
pub fn build_marked(chain: &ReversibleChain, bundle: &CommittorBundle) -> Result<MarkedChain> {
    let set = bundle.set.clone();
    let n = chain.n();
    if set.n() != n {
        return Err(Error::ShapeMismatch { expected: format!("index set over {n} states"), found: set.n().to_string() });
    }
    let k = set.len();
    let comp = set.complement().to_vec();
    let m0 = k + k * comp.len();
    let mut all_labels = Vec::with_capacity(m0);
    for (p, &i) in set.members().iter().enumerate() {
        all_labels.push((p, i));
    }
    for p in 0..k {
        for &j in &comp {
            all_labels.push((p, j));
        }
    }
    let unpruned_rows: Vec<Vec<(usize, f64)>> =
        all_labels.iter().map(|&(p, x)| chain.transitions(x).iter().map(|&(y, r)| (unpruned_index(&set, p, y), r)).collect()).collect();

    let mut reached = vec![false; m0];
    let mut queue: VecDeque<usize> = (0..k).collect();
    reached[..k].fill(true);
    while let Some(s) = queue.pop_front() {
        for &(t, _) in &unpruned_rows[s] {
            if !reached[t] {
                reached[t] = true;
                queue.push_back(t);
            }
        }
    }
    let mut kept = vec![None; m0];
    let mut labels = Vec::new();
    let mut pruned = Vec::new();
    for s in 0..m0 {
        let (p, x) = all_labels[s];
        if reached[s] {
            kept[s] = Some(labels.len());
            labels.push((p, x));
        } else {
            pruned.push((set.members()[p], x));
        }
    }
    let rows: Vec<Vec<(usize, f64)>> =
        (0..m0).filter(|&s| reached[s]).map(|s| unpruned_rows[s].iter().map(|&(t, r)| (kept[t].expect("closed under transitions"), r)).collect()).collect();
    let exit = labels.iter().map(|&(_, x)| chain.exit_rate(x)).collect();
    let pi = marked_stationary(&labels, &bundle.committor, chain.stationary())?;
    let h = pi.iter().map(|p| p.sqrt()).collect();
    Ok(MarkedChain { set, labels, kept, pruned, rows, exit, unpruned_rows, pi, h })
}

/// `π̊(i, j) = C̃_{j,i}·π_j`.
fn marked_stationary(labels: &[(usize, usize)], committor: &Mat<f64>, pi: &[f64]) -> Result<Vec<f64>> {
    labels
        .iter()
        .enumerate()
        .map(|(s, &(p, x))| {
            let v = committor[(x, p)] * pi[x];
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::NonPositiveStationary { index: s, value: v })
            }
        })
        .collect()
}

impl MarkedChain {
    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn set(&self) -> &IndexSet {
        &self.set
    }

    /// `(marking position in I, original state)` of augmented state `s`.
    pub fn label(&self, s: usize) -> (usize, usize) {
        self.labels[s]
    }

    pub fn labels(&self) -> &[(usize, usize)] {
        &self.labels
    }

    pub fn marking(&self, s: usize) -> usize {
        self.labels[s].0
    }

    pub fn position(&self, s: usize) -> usize {
        self.labels[s].1
    }

    /// Augmented index of `(marking position, original state)` if kept.
    pub fn index_of(&self, marking: usize, position: usize) -> Option<usize> {
        if marking >= self.set.len() || position >= self.set.n() {
            return None;
        }
        if let Some(p) = self.set.position(position) {
            if p != marking {
                return None;
            }
        }
        self.kept[unpruned_index(&self.set, marking, position)]
    }

    /// Pruned `(marking state, position)` pairs in original indices.
    pub fn pruned(&self) -> &[(usize, usize)] {
        &self.pruned
    }

    pub fn unpruned_size(&self) -> usize {
        self.unpruned_rows.len()
    }

    pub fn transitions(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        self.exit[s]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn sqrt_stationary(&self) -> &[f64] {
        &self.h
    }

    fn dense(rows: &[Vec<(usize, f64)>], diag: impl Fn(usize) -> f64) -> Mat<f64> {
        let m = rows.len();
        let mut r = Mat::<f64>::zeros(m, m);
        for (s, row) in rows.iter().enumerate() {
            for &(t, v) in row {
                r[(s, t)] += v;
            }
            r[(s, s)] -= diag(s);
        }
        r
    }

    /// `R̊` on kept states.
    pub fn rate_matrix(&self) -> Mat<f64> {
        Self::dense(&self.rows, |s| self.exit[s])
    }

    /// `R̊` before pruning, of size `|I| + |I|·|Ī|`.
    pub fn unpruned_rate_matrix(&self) -> Mat<f64> {
        let exits: Vec<f64> = self.unpruned_rows.iter().map(|row| row.iter().map(|e| e.1).sum()).collect();
        Self::dense(&self.unpruned_rows, |s| exits[s])
    }

    /// `L̊ = −Diag(h̊)·R̊·Diag⁻¹(h̊)` (not symmetric).
    pub fn laplacian(&self) -> Mat<f64> {
        let r = self.rate_matrix();
        let neg_h: Vec<f64> = self.h.iter().map(|v| -v).collect();
        let inv_h: Vec<f64> = self.h.iter().map(|v| 1.0 / v).collect();
        linalg::diag_scale(&neg_h, r.as_ref(), &inv_h)
    }

    /// `max_j |(π̊ᵀR̊)_j|` relative to the largest stationary flow.
    pub fn stationary_residual(&self) -> f64 {
        let m = self.m();
        let mut acc = vec![0.0; m];
        let mut scale = 0.0f64;
        for s in 0..m {
            let out = self.pi[s] * self.exit[s];
            acc[s] -= out;
            scale = scale.max(out);
            for &(t, r) in &self.rows[s] {
                acc[t] += self.pi[s] * r;
            }
        }
        acc.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale.max(f64::MIN_POSITIVE)
    }

    /// `max |Diag(π̊)R̊ − (Diag(π̊)R̊)ᵀ|`; positive exactly when the marked
    /// chain is not reversible.
    pub fn flow_asymmetry(&self) -> f64 {
        let flow = linalg::scale_rows(&self.pi, self.rate_matrix().as_ref());
        linalg::asymmetry(flow.as_ref())
    }
}

/// Killed-chain counterparts of the marked projections.
#[derive(Debug, Clone)]
pub struct KilledProjections {
    pub gamma: f64,
    pub committor: KilledCommittor,
    /// `π̊_γ(i, j) = (C̃_γ)_{j,i}·π_j`.
    pub pi: Vec<f64>,
    pub h: Vec<f64>,
    pub w: Mat<f64>,
    pub q: Mat<f64>,
    /// `L̊_γ = −Diag(h̊_γ)(R̊ − γI)Diag⁻¹(h̊_γ)`.
    pub laplacian: Mat<f64>,
    /// `L_γ = L + γI`.
    pub l_gamma: Mat<f64>,
}

/// Rescaled marking and position projections.
#[derive(Debug, Clone)]
pub struct MarkedProjections {
    /// `W̃`, `m × |I|` marking indicator.
    pub marking_indicator: Mat<f64>,
    /// `Q̃`, `m × n` position indicator.
    pub position_indicator: Mat<f64>,
    /// `W = Diag(h̊)W̃Diag⁻¹(ĥ)`.
    pub w: Mat<f64>,
    /// `Q = Diag(h̊)Q̃Diag⁻¹(h)`.
    pub q: Mat<f64>,
    /// Symmetrized committor `C` of the same set.
    pub sym_committor: Mat<f64>,
    pub killed: Option<KilledProjections>,
}

pub fn projections(mc: &MarkedChain, bundle: &CommittorBundle, lap: &SpectralLaplacian, gamma: Option<f64>) -> Result<MarkedProjections> {
    if bundle.set != mc.set || lap.n() != mc.set.n() {
        return Err(Error::ShapeMismatch { expected: "marked chain, committor and Laplacian on one set".into(), found: "mismatched inputs".into() });
    }
    let m = mc.m();
    let k = mc.set.len();
    let n = lap.n();
    let marking_indicator = Mat::from_fn(m, k, |s, p| if mc.marking(s) == p { 1.0 } else { 0.0 });
    let position_indicator = Mat::from_fn(m, n, |s, j| if mc.position(s) == j { 1.0 } else { 0.0 });
    let scaled = |hm: &[f64], ind: &Mat<f64>, h: &[f64]| {
        let inv: Vec<f64> = h.iter().map(|v| 1.0 / v).collect();
        linalg::diag_scale(hm, ind.as_ref(), &inv)
    };
    let w = scaled(&mc.h, &marking_indicator, &bundle.h_hat);
    let q = scaled(&mc.h, &position_indicator, lap.h());
    let killed = match gamma {
        None => None,
        Some(g) => {
            let ops = lap.killed(g)?;
            let committor = killed_committor(&ops, lap.h(), &mc.set)?;
            let pi_full = lap.pi();
            let pi = marked_stationary(&mc.labels, &committor.committor, &pi_full)?;
            let h: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
            let w = scaled(&h, &marking_indicator, &committor.h_hat);
            let q = scaled(&h, &position_indicator, lap.h());
            let mut r = mc.rate_matrix();
            for s in 0..m {
                r[(s, s)] -= g;
            }
            let neg_h: Vec<f64> = h.iter().map(|v| -v).collect();
            let inv_h: Vec<f64> = h.iter().map(|v| 1.0 / v).collect();
            let laplacian = linalg::diag_scale(&neg_h, r.as_ref(), &inv_h);
            Some(KilledProjections { gamma: g, committor, pi, h, w, q, laplacian, l_gamma: ops.l_gamma })
        }
    };
    Ok(MarkedProjections { marking_indicator, position_indicator, w, q, sym_committor: bundle.sym_committor.clone(), killed })
}

/// One verified identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub tolerance: f64,
    pub checks: Vec<IdentityCheck>,
    /// `max |Diag(π̊)R̊ − (Diag(π̊)R̊)ᵀ|`.
    pub flow_asymmetry: f64,
    pub passed: bool,
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Result<f64> + Sync + 'a>);

fn vec_residual(a: &[f64], b: &[f64]) -> f64 {
    linalg::relative_residual(linalg::column(a).as_ref(), linalg::column(b).as_ref())
}

/// Verifies the projection identities relating the marked, original and
/// induced chains; residuals are relative to the reference side.
pub fn identity_suite(mc: &MarkedChain, proj: &MarkedProjections, lap: &SpectralLaplacian, ic: &InducedChain) -> Result<IdentityReport> {
    const TOLERANCE: f64 = 1e-9;
    let k = mc.set.len();
    let n = lap.n();
    let l_marked = mc.laplacian();
    let w = proj.w.as_ref();
    let q = proj.q.as_ref();
    let l = lap.laplacian();
    let eye_k = Mat::<f64>::identity(k, k);
    let eye_n = Mat::<f64>::identity(n, n);
    let lm = l_marked.as_ref();
    let eye = eye_k.as_ref();
    let mut checks: Vec<Check<'_>> = vec![
        ("W^T W = I", Box::new(|| Ok(linalg::relative_residual((w.transpose() * w).as_ref(), eye)))),
        ("Q^T Q = I", Box::new(|| Ok(linalg::relative_residual((q.transpose() * q).as_ref(), eye_n.as_ref())))),
        ("Q^T W = C", Box::new(|| Ok(linalg::relative_residual((q.transpose() * w).as_ref(), proj.sym_committor.as_ref())))),
        ("L_marked Q = Q L", Box::new(|| Ok(linalg::relative_residual((lm * q).as_ref(), (q * l).as_ref())))),
        ("Q^T L_marked Q = L", Box::new(|| Ok(linalg::relative_residual((q.transpose() * lm * q).as_ref(), l)))),
        ("W^T L_marked W = L_induced", Box::new(|| Ok(linalg::relative_residual((w.transpose() * lm * w).as_ref(), ic.laplacian.as_ref())))),
        ("position marginal = pi", Box::new(|| Ok(vec_residual(&linalg::mat_vec(proj.position_indicator.transpose(), &mc.pi), &lap.pi())))),
        ("marking marginal = pi_induced", Box::new(|| Ok(vec_residual(&linalg::mat_vec(proj.marking_indicator.transpose(), &mc.pi), &ic.pi_hat)))),
        ("stationarity", Box::new(|| Ok(mc.stationary_residual()))),
    ];
    if let Some(kp) = &proj.killed {
        let wg = kp.w.as_ref();
        let qg = kp.q.as_ref();
        let cg = kp.committor.sym_committor.as_ref();
        checks.push(("W_g^T W_g = I", Box::new(move || Ok(linalg::relative_residual((wg.transpose() * wg).as_ref(), eye)))));
        checks.push((
            "||Q_g||_2 = 1",
            Box::new(move || {
                let (spec, _) = linalg::spectral_nuclear(qg)?;
                Ok((spec - 1.0).abs())
            }),
        ));
        checks.push(("Q_g^T W_g = C_g", Box::new(move || Ok(linalg::relative_residual((qg.transpose() * wg).as_ref(), cg)))));
        checks.push((
            "W_g^T L_marked,g W_g = C_g^T L_g C_g",
            Box::new(move || {
                let lhs = wg.transpose() * &kp.laplacian * wg;
                let rhs = cg.transpose() * &kp.l_gamma * cg;
                Ok(linalg::relative_residual(lhs.as_ref(), rhs.as_ref()))
            }),
        ));
    }
    let results: Vec<Result<IdentityCheck>> = checks
        .par_iter()
        .map(|(name, f)| {
            let residual = f()?;
            Ok(IdentityCheck { name: (*name).to_string(), residual, passed: residual <= TOLERANCE })
        })
        .collect();
    let checks = results.into_iter().collect::<Result<Vec<_>>>()?;
    let passed = checks.iter().all(|c| c.passed);
    Ok(IdentityReport { tolerance: TOLERANCE, checks, flow_asymmetry: mc.flow_asymmetry(), passed })
}

/// Comparison of the marked spectrum with `σ(R) ∪ σ(R_ĪĪ)^{|I|−1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumComparison {
    /// Real parts of the eigenvalues of the unpruned `R̊`, ascending.
    pub computed: Vec<f64>,
    pub expected: Vec<f64>,
    pub max_deviation: f64,
    pub max_imaginary: f64,
    /// Pruning removed states, so the kept operator's spectrum is a
    /// sub-multiset of the one compared here.
    pub pruning_changed_spectrum: bool,
    pub passed: bool,
}

pub fn marked_spectrum(mc: &MarkedChain, lap: &SpectralLaplacian) -> Result<SpectrumComparison> {
    const TOLERANCE: f64 = 1e-8;
    let r = mc.unpruned_rate_matrix();
    let eig = r.eigenvalues().map_err(|_| Error::EigenFailure)?;
    let mut computed: Vec<f64> = eig.iter().map(|z| z.re).collect();
    let max_imaginary = eig.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
    computed.sort_by(f64::total_cmp);
    let mut expected: Vec<f64> = lap.eigenvalues().iter().map(|v| -v).collect();
    let comp = mc.set.complement();
    if !comp.is_empty() && mc.set.len() > 1 {
        let block = linalg::submatrix(lap.laplacian(), comp, comp);
        let inner = linalg::sym_eigenvalues(block.as_ref())?;
        for _ in 1..mc.set.len() {
            expected.extend(inner.iter().map(|v| -v));
        }
    }
    expected.sort_by(f64::total_cmp);
    if computed.len() != expected.len() {
        return Err(Error::ShapeMismatch { expected: expected.len().to_string(), found: computed.len().to_string() });
    }
    let max_deviation = computed.iter().zip(&expected).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(SpectrumComparison {
        passed: max_deviation <= TOLERANCE && max_imaginary <= TOLERANCE,
        computed,
        expected,
        max_deviation,
        max_imaginary,
        pruning_changed_spectrum: !mc.pruned.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaLimitRow {
    pub t: f64,
    pub alpha: f64,
    /// `min(α, 10⁶/t)`.
    pub alpha_effective: f64,
    /// `max |Qᵀe^{−(L̊+α(I−WWᵀ))t}Q − C·e^{−L̂t}·Cᵀ|`.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaLimitTable {
    pub rows: Vec<AlphaLimitRow>,
    /// `max_t |Qᵀe^{−L̊t}Q − P(t)|`.
    pub unperturbed_deviation: f64,
    /// Deviation is nonincreasing in `α` at every `t`.
    pub monotone: bool,
}

/// Largest `α·t` used in the perturbed exponential.
pub const ALPHA_TIME_CAP: f64 = 1e6;

/// Convergence of the perturbed marked propagator to the structure-preserving
/// compression as the in-marking mixing rate grows.
pub fn alpha_limit_check(
    mc: &MarkedChain,
    proj: &MarkedProjections,
    lap: &SpectralLaplacian,
    ic: &InducedChain,
    t_grid: &[f64],
    alpha_grid: &[f64],
) -> Result<AlphaLimitTable> {
    if t_grid.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::NegativeTime(t_grid.iter().copied().find(|t| !(*t >= 0.0)).unwrap_or(f64::NAN)));
    }
    if alpha_grid.iter().any(|&a| !(a >= 0.0)) || alpha_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("alpha grid must be nonnegative and increasing".into()));
    }
    let m = mc.m();
    let l_marked = mc.laplacian();
    let w = proj.w.as_ref();
    let q = proj.q.as_ref();
    let mixer = Mat::<f64>::identity(m, m) - w * w.transpose();
    let c = proj.sym_committor.as_ref();
    let unperturbed: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| -> Result<f64> {
            let e = linalg::expm((&l_marked * (-t)).as_ref())?;
            let projected = q.transpose() * &e * q;
            Ok(linalg::max_abs_diff(projected.as_ref(), lap.propagator(t)?.as_ref()))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<(f64, f64)> = t_grid.iter().flat_map(|&t| alpha_grid.iter().map(move |&a| (t, a))).collect();
    let rows: Vec<AlphaLimitRow> = grid
        .par_iter()
        .map(|&(t, alpha)| -> Result<AlphaLimitRow> {
            let alpha_effective = if t > 0.0 { alpha.min(ALPHA_TIME_CAP / t) } else { alpha };
            let gen = &l_marked + &mixer * alpha_effective;
            let e = linalg::expm((&gen * (-t)).as_ref())?;
            let projected = q.transpose() * &e * q;
            let reference = c * ic.propagator(t)? * c.transpose();
            Ok(AlphaLimitRow { t, alpha, alpha_effective, deviation: linalg::max_abs_diff(projected.as_ref(), reference.as_ref()) })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows.chunks(alpha_grid.len().max(1)).all(|chunk| chunk.windows(2).all(|p| p[1].deviation <= p[0].deviation * (1.0 + 1e-9) + 1e-14));
    Ok(AlphaLimitTable { rows, unperturbed_deviation: unperturbed.into_iter().fold(0.0, f64::max), monotone })
}

/// Poisson mass per uniformization chunk, `Λ·Δt`.
const UNIFORMIZATION_CHUNK: f64 = 16.0;

/// `e^{R̊Δt}·Y` for a tall `Y` by uniformization; `R̊` is applied sparsely.
fn uniformized_step(mc: &MarkedChain, y: &Mat<f64>, dt: f64, rate: f64) -> Mat<f64> {
    let (m, k) = (y.nrows(), y.ncols());
    let lt = rate * dt;
    let mut term = y.clone();
    let mut weight = (-lt).exp();
    let mut out = Mat::from_fn(m, k, |s, c| weight * term[(s, c)]);
    let mut mass = weight;
    let mut j = 0usize;
    while 1.0 - mass > 1e-17 && (j as f64) < lt + 12.0 * lt.sqrt() + 50.0 {
        j += 1;
        let prev = term;
        term = Mat::from_fn(m, k, |s, c| {
            let mut v = prev[(s, c)] * (1.0 - mc.exit[s] / rate);
            for &(t, r) in &mc.rows[s] {
                v += prev[(t, c)] * r / rate;
            }
            v
        });
        weight *= lt / j as f64;
        mass += weight;
        for s in 0..m {
            for c in 0..k {
                out[(s, c)] += weight * term[(s, c)];
            }
        }
    }
    out
}

/// `Wᵀe^{−L̊t}W` on an ascending time grid without forming any `m × m` matrix.
///
/// Entry `(a, b)` equals `P(marking a at 0, marking b at t)/(ĥ_a·ĥ_b)` for a
/// stationary start.
pub fn reduced_marked_propagator(mc: &MarkedChain, h_hat: &[f64], t_grid: &[f64]) -> Result<Vec<Mat<f64>>> {
    let k = mc.set.len();
    if h_hat.len() != k {
        return Err(Error::ShapeMismatch { expected: format!("{k} entries of the induced null vector"), found: h_hat.len().to_string() });
    }
    if t_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("time grid must be finite, nonnegative and ascending".into()));
    }
    let m = mc.m();
    let rate = mc.exit.iter().copied().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut y = Mat::from_fn(m, k, |s, p| if mc.marking(s) == p { 1.0 } else { 0.0 });
    let mut now = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut remaining = t - now;
        while remaining > 0.0 {
            let dt = remaining.min(UNIFORMIZATION_CHUNK / rate);
            y = uniformized_step(mc, &y, dt, rate);
            remaining -= dt;
        }
        now = t;
        let mut g = Mat::<f64>::zeros(k, k);
        for s in 0..m {
            let a = mc.marking(s);
            for b in 0..k {
                g[(a, b)] += mc.pi[s] * y[(s, b)];
            }
        }
        out.push(Mat::from_fn(k, k, |a, b| g[(a, b)] / (h_hat[a] * h_hat[b])));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain, symmetrize};
    use crate::committor::committor_closed_form;
    use crate::fixtures::{k3, p2, random_reversible};
    use crate::induced::induced_chain;

    struct Setup {
        chain: ReversibleChain,
        lap: SpectralLaplacian,
        bundle: CommittorBundle,
        ic: InducedChain,
        mc: MarkedChain,
    }

    fn setup(chain: ReversibleChain, members: &[usize]) -> Setup {
        let lap = symmetrize(&chain).unwrap();
        let bundle = committor_closed_form(&lap, &IndexSet::new(chain.n(), members).unwrap()).unwrap();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let mc = build_marked(&chain, &bundle).unwrap();
        Setup { chain, lap, bundle, ic, mc }
    }

    #[test]
    fn k3_marked_states_and_stationary() {
        let s = setup(k3(), &[0, 1]);
        assert_eq!(s.mc.m(), 4);
        assert_eq!(s.mc.labels(), &[(0, 0), (1, 1), (0, 2), (1, 2)]);
        let expected = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in s.mc.stationary().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let null = linalg::stationary_of_generator(s.mc.rate_matrix().as_ref()).unwrap();
        for (a, b) in null.iter().zip(s.mc.stationary()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(s.mc.flow_asymmetry() > 1e-3);
    }

    #[test]
    fn full_set_is_original_chain() {
        let s = setup(k3(), &[0, 1, 2]);
        assert_eq!(s.mc.m(), 3);
        assert!(linalg::max_abs_diff(s.mc.rate_matrix().as_ref(), s.chain.rate_matrix().as_ref()) < 1e-15);
    }

    #[test]
    fn separated_state_is_pruned() {
        // 0 - 1 - 2 with I = {0, 1}: state 2 is only reachable through 1.
        let chain = build_chain(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)], None).unwrap();
        let s = setup(chain, &[0, 1]);
        assert_eq!(s.mc.pruned(), &[(0, 2)]);
        assert_eq!(s.mc.m(), 3);
        assert!(s.mc.stationary_residual() < 1e-12);
        let spec = marked_spectrum(&s.mc, &s.lap).unwrap();
        assert!(spec.pruning_changed_spectrum);
    }

    #[test]
    fn k3_projections() {
        let s = setup(k3(), &[0, 1]);
        let p = projections(&s.mc, &s.bundle, &s.lap, Some(0.1)).unwrap();
        let qw = p.q.transpose() * &p.w;
        assert!(linalg::max_abs_diff(qw.as_ref(), s.bundle.sym_committor.as_ref()) < 1e-12);
        let ones_m = vec![1.0; s.mc.m()];
        assert_eq!(linalg::mat_vec(p.position_indicator.as_ref(), &[1.0; 3]), ones_m);
        assert_eq!(linalg::mat_vec(p.marking_indicator.as_ref(), &[1.0; 2]), ones_m);
        let report = identity_suite(&s.mc, &p, &s.lap, &s.ic).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checks.len(), 13);
    }

    #[test]
    fn identities_on_random_chains() {
        for seed in 0..4 {
            let chain = random_reversible(8, seed);
            let s = setup(chain, &[1, 4, 6]);
            let p = projections(&s.mc, &s.bundle, &s.lap, Some(0.1)).unwrap();
            let report = identity_suite(&s.mc, &p, &s.lap, &s.ic).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
            assert!(report.flow_asymmetry > 0.0);
        }
    }

    #[test]
    fn k3_spectrum() {
        let s = setup(k3(), &[0, 1]);
        let spec = marked_spectrum(&s.mc, &s.lap).unwrap();
        let expected = [-3.0, -3.0, -2.0, 0.0];
        for (a, b) in spec.expected.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(spec.passed, "{spec:?}");
    }

    #[test]
    fn p2_and_random_spectra() {
        let s = setup(p2(), &[0]);
        let spec = marked_spectrum(&s.mc, &s.lap).unwrap();
        assert_eq!(spec.computed.len(), 2);
        assert!(spec.passed, "{spec:?}");
        let s = setup(random_reversible(7, 3), &[0, 3, 5]);
        let spec = marked_spectrum(&s.mc, &s.lap).unwrap();
        assert!(spec.passed, "{spec:?}");
    }

    #[test]
    fn alpha_limit_k3() {
        let s = setup(k3(), &[0, 1]);
        let p = projections(&s.mc, &s.bundle, &s.lap, None).unwrap();
        let table = alpha_limit_check(&s.mc, &p, &s.lap, &s.ic, &[1.0], &[0.0, 10.0, 1e3, 1e4]).unwrap();
        assert!(table.unperturbed_deviation < 1e-9);
        let dev = |a: f64| table.rows.iter().find(|r| r.alpha == a).unwrap().deviation;
        assert!(dev(1e3) < dev(10.0));
        assert!(dev(1e4) <= 1e-3);
        assert!(table.monotone);
    }

    #[test]
    fn marked_exponential_matches_ode() {
        let s = setup(random_reversible(6, 9), &[0, 2]);
        let l = s.mc.laplacian();
        let t = 0.7;
        let e = linalg::expm((&l * (-t)).as_ref()).unwrap();
        let m = s.mc.m();
        let steps = 4000;
        let dt = t / steps as f64;
        let mut x = Mat::<f64>::identity(m, m);
        let f = |y: &Mat<f64>| &l * y * (-1.0);
        for _ in 0..steps {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (dt / 2.0)));
            let k3 = f(&(&x + &k2 * (dt / 2.0)));
            let k4 = f(&(&x + &k3 * dt));
            x = &x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (dt / 6.0);
        }
        assert!(linalg::max_abs_diff(e.as_ref(), x.as_ref()) < 1e-7);
    }

    #[test]
    fn uniformization_matches_dense_exponential() {
        let chain = random_reversible(9, 5);
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(9, &[1, 4, 7]).unwrap();
        let bundle = committor_closed_form(&lap, &set).unwrap();
        let mc = build_marked(&chain, &bundle).unwrap();
        let proj = projections(&mc, &bundle, &lap, None).unwrap();
        let grid = [0.0, 0.3, 2.0, 40.0];
        let fast = reduced_marked_propagator(&mc, &bundle.h_hat, &grid).unwrap();
        let l = mc.laplacian();
        for (t, g) in grid.iter().zip(&fast) {
            let e = linalg::expm((&l * (-t)).as_ref()).unwrap();
            let dense = proj.w.transpose() * &e * &proj.w;
            assert!(linalg::max_abs_diff(g.as_ref(), dense.as_ref()) < 1e-11, "t = {t}");
        }
    }
}
