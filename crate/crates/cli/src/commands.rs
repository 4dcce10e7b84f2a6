//! The six subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context as _};
use markov_compress::chain::{symmetrize, ReversibleChain, SpectralLaplacian};
use markov_compress::committor::{committor_absorbing_solve, committor_closed_form, killed_committor, mean_absorption_times, CommittorBundle};
use markov_compress::compress::{
    self, error_curves, integrated_occupation_check, nystrom_errors, obliqueness, structure_preserving, BoundReport, Orthogonalization, ProjectiveCompression,
};
use markov_compress::fixtures::{random_reversible, synthetic_webgraph_chain};
use markov_compress::induced::{hitting_preservation, induced_chain, interpretation_checks, InducedChain};
use markov_compress::io::{self, InputFormat};
use markov_compress::linalg;
use markov_compress::marked::{build_marked, identity_suite, marked_spectrum, projections, reduced_marked_propagator};
use markov_compress::select::{greedy_select, selection_curves};
use markov_compress::simulate::{cycle_ratio_exact, estimate_committor, estimate_cycle_counts, estimate_first_passage, estimate_reduced_dynamics};
use markov_compress::subset::IndexSet;
use serde_json::json;

use crate::config::{FileFormat, Mode, RunConfig, SyntheticKind};
use crate::summary::{fmt, Check, Summary};

/// Marked chains larger than this skip the dense identity suite.
pub const MARKED_DENSE_LIMIT: usize = 2000;
/// Unpruned marked chains larger than this skip the nonsymmetric eigensolve.
pub const MARKED_SPECTRUM_LIMIT: usize = 600;
/// Monte-Carlo corroboration is limited to chains this small.
pub const MONTE_CARLO_LIMIT: usize = 200;
/// At most this many starting states for the hitting-time estimates.
const HITTING_STARTS: usize = 12;

pub const COMMANDS: [&str; 5] = ["build", "select", "compress", "verify", "simulate"];

pub struct Context {
    pub cfg: RunConfig,
    pub chain: ReversibleChain,
    pub lap: SpectralLaplacian,
}

impl Context {
    pub fn load(cfg: RunConfig) -> anyhow::Result<Self> {
        let chain = match (&cfg.input, &cfg.synthetic) {
            (Some(path), None) => {
                let format = match (cfg.format, cfg.mode) {
                    (FileFormat::MatrixMarket, Mode::Webgraph) => InputFormat::MatrixMarketAdjacency,
                    (FileFormat::MatrixMarket, Mode::Rates) => InputFormat::MatrixMarketRates,
                    (FileFormat::EdgeListCsv, _) => InputFormat::EdgeListCsv,
                };
                io::load_chain(path, format)?
            }
            (None, Some(s)) => match s.kind {
                SyntheticKind::Webgraph => synthetic_webgraph_chain(s.n, s.seed),
                SyntheticKind::Random => random_reversible(s.n, s.seed),
            },
            _ => bail!("exactly one of `input` and `synthetic` must be given"),
        };
        let lap = symmetrize(&chain)?;
        Ok(Self { cfg, chain, lap })
    }

    pub fn out(&self, name: &str) -> std::path::PathBuf {
        self.cfg.output.join(name)
    }

    pub fn grid(&self) -> Vec<f64> {
        let g = &self.cfg.t_grid;
        let unit = self.lap.trace_fundamental() / self.lap.n() as f64;
        let lo = g.min.unwrap_or(1e-2 * unit);
        let hi = g.max.unwrap_or(1e3 * unit).max(lo);
        if g.points == 1 {
            return vec![lo];
        }
        if g.log {
            linalg::log_grid(lo, hi, g.points)
        } else {
            (0..g.points).map(|i| lo + (hi - lo) * i as f64 / (g.points - 1) as f64).collect()
        }
    }

    pub fn gamma(&self) -> f64 {
        self.cfg.gamma.unwrap_or_else(|| compress::default_gamma(&self.lap))
    }

    /// Explicit set, or the greedy selection of size `k`.
    pub fn selected(&self) -> anyhow::Result<IndexSet> {
        let n = self.lap.n();
        match &self.cfg.set {
            Some(set) => Ok(IndexSet::new(n, set)?),
            None => Ok(IndexSet::new(n, &greedy_select(&self.lap, self.cfg.k)?.ordered)?),
        }
    }

    fn parts(&self) -> anyhow::Result<(IndexSet, CommittorBundle, InducedChain)> {
        let set = self.selected()?;
        let bundle = committor_closed_form(&self.lap, &set)?;
        let ic = induced_chain(&self.chain, &bundle)?;
        Ok((set, bundle, ic))
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn build(ctx: &Context) -> anyhow::Result<Summary> {
    let path = ctx.out("chain.mtx");
    io::save_chain(&path, &ctx.chain)?;
    let pi = ctx.chain.stationary();
    let gap = ctx.lap.eigenvalues().get(1).copied().unwrap_or(0.0);
    let checks = vec![Check::at_most("null space dimension", ctx.lap.null_rank() as f64, 1.0), Check::at_least("spectral gap", gap, f64::MIN_POSITIVE)];
    let data = json!({
        "n": ctx.chain.n(),
        "transitions": ctx.chain.nnz_off_diagonal(),
        "stationary_min": pi.iter().copied().fold(f64::INFINITY, f64::min),
        "stationary_max": pi.iter().copied().fold(0.0, f64::max),
        "spectral_gap": gap,
        "trace_fundamental": ctx.lap.trace_fundamental(),
    });
    Ok(Summary::new("build", &ctx.cfg, checks, vec!["chain.mtx".into()], data))
}

pub fn select(ctx: &Context) -> anyhow::Result<Summary> {
    let trace = greedy_select(&ctx.lap, ctx.cfg.k)?;
    let rows: Vec<Vec<String>> = (0..trace.len())
        .map(|j| vec![(j + 1).to_string(), trace.ordered[j].to_string(), fmt(trace.eps_nuc[j]), fmt(trace.scores[j]), fmt(trace.spectral_lower_bound[j])])
        .collect();
    io::write_csv(&ctx.out("selection.csv"), &["k", "chosen", "eps_nuc", "score", "spectral_lower_bound"], &rows)?;
    let mut artifacts = vec!["selection.csv".to_string()];

    let mut checks = Vec::new();
    let increases = trace.eps_nuc.windows(2).filter(|w| w[1] >= w[0]).count();
    checks.push(Check::at_most("eps_nuc strictly decreasing (violations)", increases as f64, 0.0));
    let score_dev = (1..trace.len()).map(|j| (trace.scores[j] - (trace.eps_nuc[j - 1] - trace.eps_nuc[j])).abs() / trace.eps_nuc[j - 1]).fold(0.0, f64::max);
    checks.push(Check::at_most("score equals eps_nuc decrease (relative)", score_dev, 1e-8));
    let lb_margin = trace.eps_nuc.iter().zip(&trace.spectral_lower_bound).map(|(e, lb)| e - lb).fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("eps_nuc minus spectral lower bound", lb_margin, 0.0));

    let mut curves_json = serde_json::Value::Null;
    if ctx.cfg.suites.selection_curves {
        let curves = selection_curves(&ctx.lap, &trace, ctx.cfg.norm_method)?;
        let rows: Vec<Vec<String>> = curves
            .iter()
            .map(|p| vec![p.k.to_string(), p.chosen.to_string(), fmt(p.eps2), fmt(p.eps_nuc), fmt(p.psi2), fmt(p.psi_nuc), fmt(p.spectral_lower_bound)])
            .collect();
        io::write_csv(&ctx.out("selection_curves.csv"), &["k", "chosen", "eps2", "eps_nuc", "psi2", "psi_nuc", "spectral_lower_bound"], &rows)?;
        artifacts.push("selection_curves.csv".into());
        let ratio = curves.iter().map(|p| p.psi_nuc / (p.k as f64 * p.eps_nuc)).fold(0.0, f64::max);
        checks.push(Check::at_most("psi_nuc / (k eps_nuc)", ratio, 1.0 + 1e-9));
        let spectral_vs_nuclear = curves.iter().map(|p| p.eps2 / p.eps_nuc).fold(0.0, f64::max);
        checks.push(Check::at_most("eps2 / eps_nuc", spectral_vs_nuclear, 1.0 + 1e-9));
        curves_json = serde_json::to_value(&curves)?;
    }
    let data = json!({ "trace": trace, "curves": curves_json });
    Ok(Summary::new("select", &ctx.cfg, checks, artifacts, data))
}

const BOUND_HEADER: [&str; 22] = [
    "t",
    "err2_proj",
    "errnuc_proj",
    "err2_sp",
    "errnuc_sp",
    "bound2_thm2",
    "boundnuc_thm2",
    "bound2_thm3s",
    "boundnuc_thm3s",
    "boundnuc_thm3",
    "err2_gap",
    "errnuc_gap",
    "bound2_gap",
    "boundnuc_gap",
    "vacuous_spectral_projective",
    "vacuous_nuclear_projective",
    "vacuous_spectral_gap",
    "vacuous_nuclear_gap",
    "vacuous_spectral_composite",
    "vacuous_nuclear_composite",
    "vacuous_nuclear_only",
    "set_size",
];

fn write_bound_report(path: &Path, report: &BoundReport) -> anyhow::Result<()> {
    let k = report.set.len().to_string();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let v = r.vacuous;
            let mut row: Vec<String> = [
                r.t,
                r.err2_proj,
                r.errnuc_proj,
                r.err2_sp,
                r.errnuc_sp,
                r.bound2_projective,
                r.boundnuc_projective,
                r.bound2_composite,
                r.boundnuc_composite,
                r.boundnuc_nuclear_only,
                r.err2_gap,
                r.errnuc_gap,
                r.bound2_gap,
                r.boundnuc_gap,
            ]
            .into_iter()
            .map(fmt)
            .collect();
            for flag in [v.spectral_projective, v.nuclear_projective, v.spectral_gap, v.nuclear_gap, v.spectral_composite, v.nuclear_composite, v.nuclear_only]
            {
                row.push(u8::from(flag).to_string());
            }
            row.push(k.clone());
            row
        })
        .collect();
    io::write_csv(path, &BOUND_HEADER, &rows)?;
    Ok(())
}

pub fn compress(ctx: &Context) -> anyhow::Result<Summary> {
    let (set, bundle, ic) = ctx.parts()?;
    let grid = ctx.grid();
    let report = error_curves(&ctx.lap, &bundle, &ic, &grid, ctx.cfg.norm_method)?;
    write_bound_report(&ctx.out("bound_report.csv"), &report)?;
    let mut artifacts = vec!["bound_report.csv".to_string()];
    let mut checks = vec![Check::at_most("bound violations", report.violations.len() as f64, 0.0)];
    for v in &report.violations {
        checks.push(Check::holds("bound violation", false).with_note(v.clone()));
    }

    if ctx.cfg.suites.reduced_curves {
        let proj = ProjectiveCompression::new(&ctx.lap, &bundle, Orthogonalization::Symmetric)?;
        let mc = build_marked(&ctx.chain, &bundle)?;
        let marked = reduced_marked_propagator(&mc, &bundle.h_hat, &grid)?;
        let k = set.len();
        let mut rows = Vec::new();
        for (ti, &t) in grid.iter().enumerate() {
            let reduced = proj.reduced_propagator(t)?;
            let exact = proj.projected_exact(&ctx.lap, t)?;
            let induced = ic.propagator(t)?;
            for a in 0..k {
                for b in 0..k {
                    rows.push(vec![fmt(t), "projective".into(), a.to_string(), b.to_string(), fmt(reduced[(a, b)]), fmt(exact[(a, b)])]);
                    rows.push(vec![fmt(t), "structure".into(), a.to_string(), b.to_string(), fmt(induced[(a, b)]), fmt(marked[ti][(a, b)])]);
                }
            }
        }
        io::write_csv(&ctx.out("reduced_curves.csv"), &["t", "kind", "row", "col", "reduced", "exact"], &rows)?;
        artifacts.push("reduced_curves.csv".into());
    }

    let data = json!({
        "set": set.members(),
        "eps": report.eps,
        "psi": { "psi2": report.psi.psi2, "psi_nuc": report.psi.psi_nuc, "psi_nuc_hitting": report.psi.psi_nuc_hitting },
        "tightness": report.tightness,
        "principal_condition": bundle.principal_condition,
        "violations": report.violations,
        "grid_points": grid.len(),
    });
    Ok(Summary::new("compress", &ctx.cfg, checks, artifacts, data))
}

pub fn verify(ctx: &Context) -> anyhow::Result<Summary> {
    let (set, bundle, ic) = ctx.parts()?;
    let lap = &ctx.lap;
    let suites = &ctx.cfg.suites;
    let n = lap.n();
    let mut checks = Vec::new();
    let mut data = BTreeMap::new();
    data.insert("set", json!(set.members()));

    if suites.committor {
        let oracle = committor_absorbing_solve(&ctx.chain, &set)?;
        checks.push(Check::at_most("committor closed form vs absorbing solve", linalg::max_abs_diff(bundle.committor.as_ref(), oracle.as_ref()), 1e-9));
        let gap = lap.eigenvalues()[1];
        let mut errs = Vec::new();
        for factor in [1e-1, 1e-2, 1e-3] {
            let gamma = factor * gap;
            let kc = killed_committor(&lap.killed(gamma)?, lap.h(), &set)?;
            errs.push((gamma, linalg::max_abs_diff(kc.committor.as_ref(), bundle.committor.as_ref())));
        }
        let decreasing = errs.windows(2).all(|w| w[1].1 <= w[0].1);
        checks.push(Check::holds("killed committor error decreases with gamma", decreasing));
        if errs[2].1 > 1e-12 && errs[1].1 > 1e-12 {
            let slope = (errs[1].1 / errs[2].1).ln() / (errs[1].0 / errs[2].0).ln();
            checks.push(Check::at_least("killed committor convergence order", slope, 0.9));
        }
        data.insert("killed_committor_errors", json!(errs));
    }

    if suites.induced {
        let hp = hitting_preservation(lap, &ic);
        checks.push(Check::at_most("hitting times preserved on the set (relative)", hp.relative(), 1e-8));
        let interp = interpretation_checks(&ctx.chain, &ic, None)?;
        checks.push(Check::at_most("induced exit times (relative)", interp.exit_time_deviation, interp.tolerance));
        checks.push(Check::at_most("induced jump probabilities", interp.jump_probability_deviation, interp.tolerance));
        checks.push(Check::at_most("induced stationary distribution", interp.stationary_deviation, interp.tolerance));
    }

    if suites.structure {
        let mut min_entry = f64::INFINITY;
        let mut row_dev = 0.0f64;
        for &t in &ctx.grid() {
            let (_, p) = structure_preserving(&bundle, &ic, lap.h(), t)?;
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    min_entry = min_entry.min(p[(i, j)]);
                    sum += p[(i, j)];
                }
                row_dev = row_dev.max((sum - 1.0).abs());
            }
        }
        checks.push(Check::at_least("structure-preserving propagator entries", min_entry, -1e-12));
        checks.push(Check::at_most("structure-preserving row sums", row_dev, 1e-10));
    }

    if suites.integral {
        let occ = integrated_occupation_check(lap, &set, ctx.gamma())?;
        checks.push(Check::at_most("integrated structure-preserving propagator vs Nystrom", occ.structure_preserving, 1e-9));
        checks.push(Check::at_most("integrated projective propagator vs Nystrom", occ.projective, 1e-9));
        data.insert("integral", json!(occ));
    }

    if suites.obliqueness {
        let eps = nystrom_errors(lap, &set, ctx.cfg.norm_method)?;
        let psi = obliqueness(lap, &set)?;
        checks.push(Check::at_most("eps_nuc two formulas (relative)", rel_dev(eps.eps_nuc, eps.eps_nuc_schur), 1e-9));
        checks.push(Check::at_most("psi_nuc two formulas (relative)", rel_dev(psi.psi_nuc, psi.psi_nuc_hitting), 1e-7));
        checks.push(Check::at_most("psi_nuc / (|I| eps_nuc)", psi.psi_nuc / (set.len() as f64 * eps.eps_nuc), 1.0 + 1e-9));
        data.insert("eps", json!(eps));
        data.insert("psi", json!({ "psi2": psi.psi2, "psi_nuc": psi.psi_nuc, "psi_nuc_hitting": psi.psi_nuc_hitting }));
    }

    if suites.marked {
        let mc = build_marked(&ctx.chain, &bundle)?;
        data.insert("marked_states", json!(mc.m()));
        if mc.m() <= MARKED_DENSE_LIMIT {
            let proj = projections(&mc, &bundle, lap, Some(ctx.gamma()))?;
            let report = identity_suite(&mc, &proj, lap, &ic)?;
            for c in &report.checks {
                checks.push(Check::at_most(format!("marked identity: {}", c.name), c.residual, report.tolerance));
            }
        } else {
            checks.push(Check::skipped("marked identities", format!("{} marked states exceed {MARKED_DENSE_LIMIT}", mc.m())));
        }
        if mc.unpruned_size() <= MARKED_SPECTRUM_LIMIT {
            let spec = marked_spectrum(&mc, lap)?;
            checks.push(Check::at_most("marked spectrum deviation", spec.max_deviation, 1e-8));
            checks.push(Check::at_most("marked spectrum imaginary part", spec.max_imaginary, 1e-8));
        } else {
            checks.push(Check::skipped("marked spectrum", format!("{} unpruned states exceed {MARKED_SPECTRUM_LIMIT}", mc.unpruned_size())));
        }
    }

    if suites.bounds {
        let report = error_curves(lap, &bundle, &ic, &ctx.grid(), ctx.cfg.norm_method)?;
        checks.push(Check::at_most("bound violations", report.violations.len() as f64, 0.0));
        for v in &report.violations {
            checks.push(Check::holds("bound violation", false).with_note(v.clone()));
        }
        data.insert("tightness", json!(report.tightness));
    }
    Ok(Summary::new("verify", &ctx.cfg, checks, Vec::new(), serde_json::to_value(data)?))
}

pub fn simulate(ctx: &Context) -> anyhow::Result<Summary> {
    let n = ctx.lap.n();
    if n > MONTE_CARLO_LIMIT {
        bail!("Monte-Carlo corroboration is limited to {MONTE_CARLO_LIMIT} states, chain has {n}");
    }
    let (set, bundle, _) = ctx.parts()?;
    let n_traj = ctx.cfg.trajectories;
    let seed = ctx.cfg.seed;
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    let mut data = BTreeMap::new();

    let est = estimate_committor(&ctx.chain, &set, n_traj, seed)?;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for (i, row) in est.iter().enumerate() {
        for (p, e) in row.iter().enumerate() {
            let exact = bundle.committor[(i, p)];
            if !e.within(exact, 3.0) {
                worst = worst.max((e.mean - exact).abs() / e.stderr.max(f64::MIN_POSITIVE));
                checks.push(Check::holds(format!("committor ({i}, {}) within 3 sigma", set.members()[p]), false));
            }
            rows.push(vec![i.to_string(), set.members()[p].to_string(), fmt(e.mean), fmt(e.stderr), fmt(exact)]);
        }
    }
    checks.push(Check::holds("committor estimates within 3 sigma", worst == 0.0));
    io::write_csv(&ctx.out("simulate_committor.csv"), &["state", "target", "mean", "stderr", "exact"], &rows)?;
    artifacts.push("simulate_committor.csv".to_string());

    let targets: Vec<bool> = (0..n).map(|s| set.contains(s)).collect();
    let exact_times = mean_absorption_times(&ctx.chain, &set)?;
    let mut rows = Vec::new();
    for (idx, &start) in set.complement().iter().take(HITTING_STARTS).enumerate() {
        let fp = estimate_first_passage(&ctx.chain, start, &targets, n_traj, seed.wrapping_add(1000 + idx as u64))?;
        let ok = fp.time.within(exact_times[start], 3.0);
        checks.push(Check::holds(format!("hitting time from {start} within 3 sigma"), ok));
        rows.push(vec![start.to_string(), fmt(fp.time.mean), fmt(fp.time.stderr), fmt(exact_times[start])]);
    }
    io::write_csv(&ctx.out("simulate_hitting.csv"), &["start", "mean", "stderr", "exact"], &rows)?;
    artifacts.push("simulate_hitting.csv".into());

    if let (Some(&k), Some(&i)) = (set.complement().first(), set.members().first()) {
        let exact = cycle_ratio_exact(&ctx.lap, k, i, &set)?;
        let ht = markov_compress::committor::hitting_times(&ctx.lap);
        let horizon = 400.0 * (ht.times[(k, i)] + ht.times[(i, k)]);
        let cycles = estimate_cycle_counts(&ctx.chain, k, i, &set, horizon, 32, seed.wrapping_add(2000))?;
        checks.push(Check::holds("member cycles nested in set cycles", cycles.nested));
        checks.push(Check::at_most("member to set cycle ratio", cycles.member_cycles as f64 / cycles.set_cycles as f64, 1.0));
        checks.push(Check::holds("cycle ratio within 3 sigma", cycles.ratio.within(exact, 3.0)));
        let weighted = exact * bundle.committor[(k, 0)];
        checks.push(Check::at_most("first-hit to member cycle ratio", cycles.weighted_ratio.mean, 1.0));
        checks.push(Check::holds("first-hit cycle ratio within 3 sigma", cycles.weighted_ratio.within(weighted, 3.0)));
        data.insert("cycles", json!({ "k": k, "i": i, "exact": exact, "exact_weighted": weighted, "estimate": cycles }));
    }

    let mc = build_marked(&ctx.chain, &bundle)?;
    let grid = {
        let unit = ctx.lap.trace_fundamental() / n as f64;
        let lo = ctx.cfg.t_grid.min.unwrap_or(1e-2 * unit);
        let hi = ctx.cfg.t_grid.max.unwrap_or(10.0 * unit).max(lo);
        linalg::log_grid(lo, hi, ctx.cfg.curve_points)
    };
    let exact = reduced_marked_propagator(&mc, &bundle.h_hat, &grid)?;
    let est = estimate_reduced_dynamics(&mc, &bundle.h_hat, &grid, n_traj, seed.wrapping_add(3000))?;
    let k = set.len();
    let mut rows = Vec::new();
    let mut misses = 0usize;
    for (ti, &t) in grid.iter().enumerate() {
        for a in 0..k {
            for b in 0..k {
                let e = &est.curves[ti][a][b];
                let x = exact[ti][(a, b)];
                if !e.within(x, 3.0) {
                    misses += 1;
                }
                rows.push(vec![fmt(t), format!("{a}-{b}"), fmt(e.mean), fmt(e.stderr), fmt(x)]);
            }
        }
    }
    checks.push(Check::at_most("reduced-dynamics entries outside 3 sigma", misses as f64, 0.0));
    io::write_csv(&ctx.out("simulate_curves.csv"), &["t", "entry", "mean", "stderr", "exact"], &rows)?;
    artifacts.push("simulate_curves.csv".into());
    data.insert("trajectories", json!(n_traj));
    Ok(Summary::new("simulate", &ctx.cfg, checks, artifacts, serde_json::to_value(data)?))
}

/// Merge the summaries present in the output directory.
pub fn report(cfg: &RunConfig) -> anyhow::Result<Summary> {
    let mut sections = serde_json::Map::new();
    let mut checks = Vec::new();
    for name in COMMANDS {
        let path = cfg.output.join(format!("{name}.json"));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let summary: Summary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for mut c in summary.checks.iter().cloned() {
            c.name = format!("{name}: {}", c.name);
            checks.push(c);
        }
        sections.insert(
            name.to_string(),
            json!({ "passed": summary.passed, "config_hash": summary.config_hash, "version": summary.version, "failures": summary.failures.len(), "data": summary.data }),
        );
    }
    if sections.is_empty() {
        bail!("no command summaries found in {}", cfg.output.display());
    }
    Ok(Summary::new("report", cfg, checks, Vec::new(), serde_json::Value::Object(sections)))
}
