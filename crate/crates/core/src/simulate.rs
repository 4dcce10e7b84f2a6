//! Jump-process sampling and Monte-Carlo estimators.
//!
//! Every trajectory draws from its own ChaCha8 stream, keyed by the run seed
//! and the trajectory index, so results do not depend on how rayon schedules
//! the work. Per-trajectory samples are collected in index order and reduced
//! sequentially.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{ReversibleChain, SpectralLaplacian};
use crate::committor::hitting_times;
use crate::error::{Error, Result};
use crate::linalg;
use crate::marked::MarkedChain;
use crate::subset::IndexSet;

/// RNG for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sparse generator with unit access to exit rates, shared by the original
/// and marked samplers.
pub trait JumpProcess: Sync {
    fn states(&self) -> usize;
    fn exit_rate(&self, s: usize) -> f64;
    fn transitions(&self, s: usize) -> &[(usize, f64)];
}

impl JumpProcess for ReversibleChain {
    fn states(&self) -> usize {
        self.n()
    }
    fn exit_rate(&self, s: usize) -> f64 {
        ReversibleChain::exit_rate(self, s)
    }
    fn transitions(&self, s: usize) -> &[(usize, f64)] {
        ReversibleChain::transitions(self, s)
    }
}

impl JumpProcess for MarkedChain {
    fn states(&self) -> usize {
        self.m()
    }
    fn exit_rate(&self, s: usize) -> f64 {
        MarkedChain::exit_rate(self, s)
    }
    fn transitions(&self, s: usize) -> &[(usize, f64)] {
        MarkedChain::transitions(self, s)
    }
}

fn holding_time<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}

fn next_state<P: JumpProcess + ?Sized, R: Rng>(process: &P, s: usize, rng: &mut R) -> usize {
    let row = process.transitions(s);
    let mut u = rng.random::<f64>() * process.exit_rate(s);
    for &(j, r) in row {
        if u < r {
            return j;
        }
        u -= r;
    }
    row.last().expect("state with positive exit rate has transitions").0
}

/// One jump from `s`: holding time and destination.
fn step<P: JumpProcess + ?Sized, R: Rng>(process: &P, s: usize, rng: &mut R) -> (f64, usize) {
    let dt = holding_time(rng, process.exit_rate(s));
    (dt, next_state(process, s, rng))
}

/// Initial condition of a sampled path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    State(usize),
    Stationary,
}

/// Piecewise-constant path: `states[k]` is occupied on
/// `[jump_times[k], jump_times[k+1])`, the last one until `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub t_max: f64,
}

impl Trajectory {
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }

    /// Time spent in each state up to `t_max`.
    pub fn occupation(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        for (k, &s) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.t_max);
            occ[s] += end - self.jump_times[k];
        }
        occ
    }
}

fn initial_state<R: Rng>(start: Start, weights: &[f64], rng: &mut R) -> Result<usize> {
    match start {
        Start::State(s) if s < weights.len() => Ok(s),
        Start::State(s) => Err(Error::IndexOutOfRange { index: s, n: weights.len() }),
        Start::Stationary => {
            let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(dist.sample(rng))
        }
    }
}

fn sample_with<P: JumpProcess + ?Sized>(process: &P, x0: usize, t_max: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut jump_times = vec![0.0];
    let mut states = vec![x0];
    let mut t = 0.0;
    let mut s = x0;
    loop {
        if process.exit_rate(s) <= 0.0 {
            break;
        }
        let (dt, next) = step(process, s, rng);
        t += dt;
        if t >= t_max {
            break;
        }
        s = next;
        jump_times.push(t);
        states.push(s);
    }
    Trajectory { jump_times, states, t_max }
}

/// Samples a path of the original chain on `[0, t_max]`.
pub fn sample_path(chain: &ReversibleChain, start: Start, t_max: f64, seed: u64) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_max}")));
    }
    let mut rng = trajectory_rng(seed, 0);
    let x0 = initial_state(start, chain.stationary(), &mut rng)?;
    Ok(sample_with(chain, x0, t_max, &mut rng))
}

/// Samples a path of any jump process, e.g. the marked chain.
pub fn sample_process<P: JumpProcess>(process: &P, weights: &[f64], start: Start, t_max: f64, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_max}")));
    }
    let x0 = initial_state(start, weights, rng)?;
    Ok(sample_with(process, x0, t_max, rng))
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub mean: f64,
    /// Sample standard deviation over `√n_samples`.
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Estimator {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>, seed: u64) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for x in samples {
            n += 1;
            sum += x;
            sum_sq += x * x;
        }
        Self::from_moments(n, sum, sum_sq, seed)
    }

    fn from_moments(n: usize, sum: f64, sum_sq: f64, seed: u64) -> Self {
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n_samples: 0, seed };
        }
        let mean = sum / n as f64;
        let stderr = if n > 1 {
            let var = ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n_samples: n, seed }
    }

    /// `|mean − target| ≤ k_sigma·stderr`, with a rounding floor for
    /// zero-variance estimates.
    pub fn within(&self, target: f64, k_sigma: f64) -> bool {
        let slack = k_sigma * self.stderr + 1e-12 * target.abs().max(1.0);
        (self.mean - target).abs() <= slack
    }
}

/// Estimates of the first passage into a target set.
#[derive(Debug, Clone)]
pub struct FirstPassage {
    pub time: Estimator,
    /// Probability of entering the targets at each state; zero estimates
    /// for non-targets.
    pub hit: Vec<Estimator>,
}

fn first_passage_one<P: JumpProcess + ?Sized>(process: &P, start: usize, targets: &[bool], rng: &mut ChaCha8Rng) -> (f64, usize) {
    let mut s = start;
    let mut t = 0.0;
    while !targets[s] {
        let (dt, next) = step(process, s, rng);
        t += dt;
        s = next;
    }
    (t, s)
}

/// First passage from `start` into `targets`. A start inside the targets
/// passes at time zero.
pub fn estimate_first_passage(chain: &ReversibleChain, start: usize, targets: &[bool], n_traj: usize, seed: u64) -> Result<FirstPassage> {
    let n = chain.n();
    if targets.len() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} target flags"), found: targets.len().to_string() });
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, n });
    }
    if !targets.iter().any(|&t| t) {
        return Err(Error::EmptySelection);
    }
    let samples: Vec<(f64, usize)> =
        (0..n_traj).into_par_iter().map(|k| first_passage_one(chain, start, targets, &mut trajectory_rng(seed, k as u64))).collect();
    let time = Estimator::from_samples(samples.iter().map(|s| s.0), seed);
    let mut counts = vec![0usize; n];
    for &(_, s) in &samples {
        counts[s] += 1;
    }
    let hit = counts.iter().map(|&c| Estimator::from_moments(n_traj, c as f64, c as f64, seed)).collect();
    Ok(FirstPassage { time, hit })
}

/// `n × |I|` committor estimates; row `i` comes from `n_traj` paths started
/// at `i`. Rows of states in `I` are exact indicators.
pub fn estimate_committor(chain: &ReversibleChain, set: &IndexSet, n_traj: usize, seed: u64) -> Result<Vec<Vec<Estimator>>> {
    let n = chain.n();
    if set.n() != n {
        return Err(Error::ShapeMismatch { expected: format!("index set over {n} states"), found: set.n().to_string() });
    }
    let targets: Vec<bool> = (0..n).map(|s| set.contains(s)).collect();
    (0..n)
        .map(|i| {
            let run_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let fp = estimate_first_passage(chain, i, &targets, n_traj, run_seed)?;
            Ok(set.members().iter().map(|&j| fp.hit[j]).collect())
        })
        .collect()
}

/// Monte-Carlo estimate of `Wᵀe^{−L̊t}W` at each time in `t_grid`, from
/// marked-chain paths started at `π̊`. Entry `(a, b)` is the probability of
/// marking `a` at time 0 and `b` at time `t`, divided by `ĥ_a·ĥ_b`.
#[derive(Debug, Clone)]
pub struct ReducedDynamicsEstimate {
    pub t_grid: Vec<f64>,
    /// `curves[t][a][b]`.
    pub curves: Vec<Vec<Vec<Estimator>>>,
}

pub fn estimate_reduced_dynamics(marked: &MarkedChain, h_hat: &[f64], t_grid: &[f64], n_traj: usize, seed: u64) -> Result<ReducedDynamicsEstimate> {
    let k = marked.set().len();
    if h_hat.len() != k {
        return Err(Error::ShapeMismatch { expected: format!("{k} entries of ĥ"), found: h_hat.len().to_string() });
    }
    if t_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("time grid must be finite and nonnegative".into()));
    }
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let weights = marked.stationary();
    let pairs: Vec<(usize, Vec<usize>)> = (0..n_traj)
        .into_par_iter()
        .map(|idx| -> Result<(usize, Vec<usize>)> {
            let mut rng = trajectory_rng(seed, idx as u64);
            let path = sample_process(marked, weights, Start::Stationary, t_max + 1.0, &mut rng)?;
            let m0 = marked.marking(path.states[0]);
            let ends = t_grid.iter().map(|&t| marked.marking(path.state_at(t))).collect();
            Ok((m0, ends))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![vec![0usize; k]; k]; t_grid.len()];
    for (m0, ends) in &pairs {
        for (ti, &b) in ends.iter().enumerate() {
            counts[ti][*m0][b] += 1;
        }
    }
    let curves = counts
        .iter()
        .map(|tab| {
            (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| {
                            let scale = 1.0 / (h_hat[a] * h_hat[b]);
                            let c = tab[a][b] as f64;
                            Estimator::from_moments(n_traj, c * scale, c * scale * scale, seed)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ReducedDynamicsEstimate { t_grid: t_grid.to_vec(), curves })
}

/// Marked-chain path obtained by running the original chain and relabelling
/// on each visit to `I`; states are augmented indices of `marked`.
pub fn sample_marked_by_relabelling(chain: &ReversibleChain, marked: &MarkedChain, start: Start, t_max: f64, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_max}")));
    }
    let s0 = initial_state(start, marked.stationary(), rng)?;
    let (mut mark, mut x) = marked.label(s0);
    let set = marked.set();
    let mut jump_times = vec![0.0];
    let mut states = vec![s0];
    let mut t = 0.0;
    loop {
        let (dt, next) = step(chain, x, rng);
        t += dt;
        if t >= t_max {
            break;
        }
        x = next;
        if let Some(p) = set.position(x) {
            mark = p;
        }
        let s = marked.index_of(mark, x).expect("relabelled path stays in the essential class");
        jump_times.push(t);
        states.push(s);
    }
    Ok(Trajectory { jump_times, states, t_max })
}

/// Cycle-count ratio for a state `k ∉ I` and a member `i ∈ I`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CycleCounts {
    /// Completed `k → I → k` cycles over all replicate paths.
    pub set_cycles: u64,
    /// Completed `k → i → k` cycles.
    pub member_cycles: u64,
    /// `set_cycles / member_cycles` with a delta-method standard error
    /// across replicates.
    pub ratio: Estimator,
    /// Every `k → i → k` completion was also a `k → I → k` completion.
    pub nested: bool,
    /// `k → I → k` cycles whose first entry into `I` is at `i`.
    pub first_hit_cycles: u64,
    /// `k → I → k` cycles that visit `i`; equal to `member_cycles` path by path.
    pub visiting_cycles: u64,
    /// `first_hit_cycles / member_cycles`, at most one on every path.
    pub weighted_ratio: Estimator,
}

#[derive(Default)]
struct CycleTally {
    set: u64,
    member: u64,
    first_hit: u64,
    visiting: u64,
    nested: bool,
}

/// Ratio of summed counts with a delta-method standard error across replicates.
fn ratio_estimator(num: &[f64], den: &[f64], seed: u64) -> Estimator {
    let b = num.len() as f64;
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let mean = sn / sd;
    let resid_sq: f64 = num.iter().zip(den).map(|(x, y)| (x - mean * y).powi(2)).sum();
    let stderr = (resid_sq / (b * (b - 1.0))).sqrt() / (sd / b);
    Estimator { mean, stderr, n_samples: num.len(), seed }
}

/// Counts excursions `k → I → k` and `k → i → k` on `replicates`
/// independent paths of length `t_max` started at `k`.
pub fn estimate_cycle_counts(chain: &ReversibleChain, k: usize, i: usize, set: &IndexSet, t_max: f64, replicates: usize, seed: u64) -> Result<CycleCounts> {
    let n = chain.n();
    if k >= n || i >= n {
        return Err(Error::IndexOutOfRange { index: k.max(i), n });
    }
    if set.contains(k) || !set.contains(i) {
        return Err(Error::InvalidArgument("need k outside the set and i inside it".into()));
    }
    if !(t_max > 0.0) || replicates < 2 {
        return Err(Error::InvalidArgument("need a positive horizon and at least two replicates".into()));
    }
    let per: Vec<CycleTally> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = trajectory_rng(seed, r as u64);
            let mut x = k;
            let mut t = 0.0;
            let mut first: Option<usize> = None;
            let mut seen_member = false;
            let mut visits_i = false;
            let mut tally = CycleTally { nested: true, ..CycleTally::default() };
            loop {
                let (dt, next) = step(chain, x, &mut rng);
                t += dt;
                if t >= t_max {
                    break;
                }
                x = next;
                if set.contains(x) && first.is_none() {
                    first = Some(x);
                }
                if x == i {
                    seen_member = true;
                    visits_i = true;
                }
                if x == k {
                    let set_done = first.is_some();
                    if set_done {
                        tally.set += 1;
                        tally.first_hit += u64::from(first == Some(i));
                        tally.visiting += u64::from(visits_i);
                        first = None;
                        visits_i = false;
                    }
                    if seen_member {
                        tally.member += 1;
                        seen_member = false;
                        tally.nested &= set_done;
                    }
                }
            }
            tally.nested &= tally.visiting == tally.member && tally.first_hit <= tally.member;
            tally
        })
        .collect();
    let col = |f: fn(&CycleTally) -> u64| -> Vec<f64> { per.iter().map(|p| f(p) as f64).collect() };
    let member = col(|p| p.member);
    Ok(CycleCounts {
        set_cycles: per.iter().map(|p| p.set).sum(),
        member_cycles: per.iter().map(|p| p.member).sum(),
        ratio: ratio_estimator(&col(|p| p.set), &member, seed),
        nested: per.iter().all(|p| p.nested),
        first_hit_cycles: per.iter().map(|p| p.first_hit).sum(),
        visiting_cycles: per.iter().map(|p| p.visiting).sum(),
        weighted_ratio: ratio_estimator(&col(|p| p.first_hit), &member, seed),
    })
}

/// Fraction of time spent in each state over `replicates` paths started at
/// `π`, with standard errors across replicates.
pub fn estimate_occupation(chain: &ReversibleChain, t_max: f64, replicates: usize, seed: u64) -> Result<Vec<Estimator>> {
    let n = chain.n();
    let fractions: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = trajectory_rng(seed, r as u64);
            let path = sample_process(chain, chain.stationary(), Start::Stationary, t_max, &mut rng)?;
            Ok(path.occupation(n).into_iter().map(|o| o / t_max).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..n).map(|s| Estimator::from_samples(fractions.iter().map(|f| f[s]), seed)).collect())
}

/// `π_k(H_ki + H_ik)/((L_ĪĪ)⁻¹)_kk`, the long-run ratio of `k → I → k` to
/// `k → i → k` cycle completions.
pub fn cycle_ratio_exact(lap: &SpectralLaplacian, k: usize, i: usize, set: &IndexSet) -> Result<f64> {
    let n = lap.n();
    if k >= n || i >= n {
        return Err(Error::IndexOutOfRange { index: k.max(i), n });
    }
    if set.contains(k) || !set.contains(i) {
        return Err(Error::InvalidArgument("need k outside the set and i inside it".into()));
    }
    let comp = set.complement();
    let block = linalg::submatrix(lap.laplacian(), comp, comp);
    let inv = linalg::spd_inverse(block.as_ref()).ok_or(Error::SingularComplementBlock)?;
    let pos = comp.iter().position(|&c| c == k).expect("k is in the complement");
    let ht = hitting_times(lap);
    let pi_k = lap.h()[k] * lap.h()[k];
    Ok(pi_k * (ht.times[(k, i)] + ht.times[(i, k)]) / inv[(pos, pos)])
}
