//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use markov_compress::chain::{symmetrize, ReversibleChain};
use markov_compress::committor::{committor_absorbing_solve, committor_closed_form, hitting_times, killed_committor, mean_absorption_times};
use markov_compress::compress::{error_curves, integrated_occupation_check, nystrom_nuclear, obliqueness, structure_preserving, BoundReport, NormMethod};
use markov_compress::fixtures::{k3, p2, random_reversible, synthetic_webgraph, synthetic_webgraph_chain};
use markov_compress::induced::{hitting_preservation, induced_chain};
use markov_compress::io::{format_matrix_market, write_atomic, CooMatrix, Symmetry};
use markov_compress::linalg::max_abs_diff;
use markov_compress::marked::{build_marked, identity_suite, marked_spectrum, projections, reduced_marked_propagator};
use markov_compress::select::{brute_force_optimal, fundamental_spectrum, greedy_select, optimality_margin, spectral_slack};
use markov_compress::simulate::{cycle_ratio_exact, estimate_committor, estimate_cycle_counts, estimate_first_passage, estimate_reduced_dynamics};
use markov_compress::subset::IndexSet;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OBLIQUENESS_AGREEMENT: f64 = 1e-7;
const IDENTITY_RESIDUAL: f64 = 1e-9;
const COMMITTOR_AGREEMENT: f64 = 1e-9;
const KILLED_ORDER_MIN: f64 = 0.9;
const ENTRY_FLOOR: f64 = -1e-12;
const ROW_SUM_TOLERANCE: f64 = 1e-10;
const HITTING_PRESERVATION: f64 = 1e-8;
const INTEGRAL_AGREEMENT: f64 = 1e-9;
const SIGMAS: f64 = 3.0;
const MC_TRAJECTORIES: usize = 100_000;
const GRID_POINTS: usize = 64;

struct Outcome {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn random_set(n: usize, size: usize, seed: u64) -> IndexSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    IndexSet::new(n, &idx).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Chains of the bound sweep: 25 random ones with `n` spread over `[10, 200]`
/// and the 2000-state synthetic webgraph.
fn sweep_chains() -> Vec<(String, ReversibleChain)> {
    let mut out: Vec<(String, ReversibleChain)> = (0..25u64)
        .map(|j| {
            let n = 10 + (190 * j as usize) / 24;
            (format!("random n={n} seed={j}"), random_reversible(n, j))
        })
        .collect();
    out.push(("webgraph n=2000".into(), synthetic_webgraph_chain(2000, 1)));
    out
}

fn excess(report: &BoundReport, pick: &[&str]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for r in &report.rows {
        let pairs = [
            ("spectral projective", r.err2_proj, r.bound2_projective),
            ("nuclear projective", r.errnuc_proj, r.boundnuc_projective),
            ("spectral gap", r.err2_gap, r.bound2_gap),
            ("nuclear gap", r.errnuc_gap, r.boundnuc_gap),
            ("spectral composite", r.err2_sp, r.bound2_composite),
            ("nuclear composite", r.errnuc_sp, r.boundnuc_composite),
            ("nuclear only", r.errnuc_sp, r.boundnuc_nuclear_only),
        ];
        for (name, err, bound) in pairs {
            if pick.contains(&name) && bound > 0.0 {
                worst = worst.max(err / bound - 1.0);
            }
        }
    }
    worst
}

fn bound_suites() -> [Outcome; 2] {
    let start = Instant::now();
    let projective = ["spectral projective", "nuclear projective"];
    let oblique = ["spectral gap", "nuclear gap", "spectral composite", "nuclear composite", "nuclear only"];
    let (mut v1, mut v2) = (Vec::new(), Vec::new());
    let (mut x1, mut x2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut t1, mut t2) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for (name, chain) in sweep_chains() {
        let lap = symmetrize(&chain).unwrap();
        let trace = greedy_select(&lap, 15.min(lap.n() - 1)).unwrap();
        let grid = lap.default_time_grid(GRID_POINTS);
        for size in [1usize, 5, 15] {
            if size >= lap.n() {
                continue;
            }
            let set = trace.prefix(lap.n(), size).unwrap();
            let bundle = committor_closed_form(&lap, &set).unwrap();
            let ic = induced_chain(&chain, &bundle).unwrap();
            let report = error_curves(&lap, &bundle, &ic, &grid, NormMethod::Auto).unwrap();
            cases += 1;
            for v in &report.violations {
                let tagged = format!("{name} |I|={size}: {v}");
                if projective.iter().any(|p| v.starts_with(p)) {
                    v1.push(tagged);
                } else {
                    v2.push(tagged);
                }
            }
            x1 = x1.max(excess(&report, &projective));
            x2 = x2.max(excess(&report, &oblique));
            let t = &report.tightness;
            t1 = t1.max(t.spectral_projective.max(t.nuclear_projective));
            t2 = t2.max(t.spectral_gap.max(t.nuclear_gap).max(t.nuclear_only));
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let describe = |v: &[String], x: f64, t: f64| {
        let head = v.first().cloned().unwrap_or_default();
        format!(
            "{cases} (chain, set) cases x {GRID_POINTS} times; violations {}; max (err/bound - 1) {x:.3e}; max tightness {t:.3}{}",
            v.len(),
            if head.is_empty() { String::new() } else { format!("; first: {head}") }
        )
    };
    [
        Outcome { id: 1, title: "projective bounds", passed: v1.is_empty(), detail: describe(&v1, x1, t1), seconds },
        Outcome { id: 2, title: "structure-preserving bounds", passed: v2.is_empty(), detail: describe(&v2, x2, t2), seconds },
    ]
}

fn obliqueness_identities() -> Outcome {
    let start = Instant::now();
    let (mut worst_dev, mut worst_ratio) = (0.0f64, 0.0f64);
    for j in 0..100u64 {
        let n = 5 + (j as usize % 40);
        let lap = symmetrize(&random_reversible(n, 100 + j)).unwrap();
        let size = 1 + (j as usize % 8).min(n - 2);
        let set = random_set(n, size, 500 + j);
        let psi = obliqueness(&lap, &set).unwrap();
        let eps = nystrom_nuclear(&lap, &set).unwrap();
        worst_dev = worst_dev.max(rel(psi.psi_nuc, psi.psi_nuc_hitting));
        worst_ratio = worst_ratio.max(psi.psi_nuc / (size as f64 * eps));
    }
    Outcome {
        id: 3,
        title: "obliqueness identities",
        passed: worst_dev <= OBLIQUENESS_AGREEMENT && worst_ratio <= 1.0,
        detail: format!("100 pairs; max relative disagreement {worst_dev:.3e} (tol {OBLIQUENESS_AGREEMENT:e}); max psi*/(|I| eps*) {worst_ratio:.6}"),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn marked_identities() -> Outcome {
    let start = Instant::now();
    let mut cases: Vec<(ReversibleChain, IndexSet)> = vec![(k3(), IndexSet::new(3, &[0, 1]).unwrap())];
    for j in 0..20u64 {
        let n = 4 + (j as usize * 26) / 19;
        let size = 1 + (j as usize % 4).min(n - 2);
        cases.push((random_reversible(n, 700 + j), random_set(n, size, 800 + j)));
    }
    let (mut worst, mut worst_spec, mut k3_spec) = (0.0f64, 0.0f64, Vec::new());
    let mut failed = Vec::new();
    for (idx, (chain, set)) in cases.iter().enumerate() {
        let lap = symmetrize(chain).unwrap();
        let bundle = committor_closed_form(&lap, set).unwrap();
        let ic = induced_chain(chain, &bundle).unwrap();
        let mc = build_marked(chain, &bundle).unwrap();
        let proj = projections(&mc, &bundle, &lap, Some(markov_compress::compress::default_gamma(&lap))).unwrap();
        let report = identity_suite(&mc, &proj, &lap, &ic).unwrap();
        for c in &report.checks {
            worst = worst.max(c.residual);
            if c.residual > IDENTITY_RESIDUAL {
                failed.push(format!("case {idx}: {} = {:.2e}", c.name, c.residual));
            }
        }
        let spec = marked_spectrum(&mc, &lap).unwrap();
        let dev = spec.max_deviation.max(spec.max_imaginary);
        worst_spec = worst_spec.max(dev);
        if dev > IDENTITY_RESIDUAL {
            failed.push(format!("case {idx}: spectrum deviation {dev:.2e}"));
        }
        if idx == 0 {
            k3_spec = spec.computed.clone();
        }
    }
    let k3_ok = k3_spec.len() == 4 && k3_spec.iter().zip([-3.0, -3.0, -2.0, 0.0]).all(|(a, b)| (a - b).abs() <= IDENTITY_RESIDUAL);
    Outcome {
        id: 4,
        title: "marked-chain identities",
        passed: failed.is_empty() && k3_ok,
        detail: format!(
            "{} cases; max identity residual {worst:.3e}; max spectrum deviation {worst_spec:.3e}; K3 spectrum {:?}{}",
            cases.len(),
            k3_spec.iter().map(|v| format!("{v:.12}")).collect::<Vec<_>>(),
            failed.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn committor_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for j in 0..50u64 {
        let n = 3 + (j as usize % 48);
        let chain = random_reversible(n, 900 + j);
        let lap = symmetrize(&chain).unwrap();
        let set = random_set(n, 1 + (j as usize % 6).min(n - 2), 950 + j);
        let closed = committor_closed_form(&lap, &set).unwrap();
        let oracle = committor_absorbing_solve(&chain, &set).unwrap();
        worst = worst.max(max_abs_diff(closed.committor.as_ref(), oracle.as_ref()));
    }
    let mut orders = Vec::new();
    for (chain, set) in [(k3(), vec![0]), (p2(), vec![0]), (random_reversible(8, 3), vec![1, 5]), (random_reversible(20, 4), vec![0, 7, 13])] {
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(lap.n(), &set).unwrap();
        let exact = committor_closed_form(&lap, &set).unwrap();
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&g| {
                let kc = killed_committor(&lap.killed(g).unwrap(), lap.h(), &set).unwrap();
                max_abs_diff(kc.committor.as_ref(), exact.committor.as_ref())
            })
            .collect();
        orders.push((errs[1] / errs[2]).log10());
    }
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome {
        id: 5,
        title: "committor oracle equivalence",
        passed: worst <= COMMITTOR_AGREEMENT && min_order >= KILLED_ORDER_MIN,
        detail: format!(
            "50 instances, max deviation {worst:.3e}; killed-committor order between gamma = 1e-2 and 1e-3: min {min_order:.3} over {} fixtures",
            orders.len()
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn fixtures() -> Vec<(ReversibleChain, IndexSet)> {
    let mut out = vec![(k3(), IndexSet::new(3, &[0, 1]).unwrap()), (p2(), IndexSet::new(2, &[0]).unwrap())];
    for j in 0..8u64 {
        let n = 10 + 7 * j as usize;
        out.push((random_reversible(n, 1200 + j), random_set(n, 1 + j as usize % 5, 1300 + j)));
    }
    let web = synthetic_webgraph_chain(200, 2);
    let lap = symmetrize(&web).unwrap();
    let set = greedy_select(&lap, 5).unwrap().prefix(200, 5).unwrap();
    out.push((web, set));
    out
}

fn structure_preservation() -> Outcome {
    let start = Instant::now();
    let (mut min_entry, mut row_dev, mut hit_dev) = (f64::INFINITY, 0.0f64, 0.0f64);
    let cases = fixtures();
    for (chain, set) in &cases {
        let lap = symmetrize(chain).unwrap();
        let bundle = committor_closed_form(&lap, set).unwrap();
        let ic = induced_chain(chain, &bundle).unwrap();
        for &t in &lap.default_time_grid(GRID_POINTS) {
            let (_, p) = structure_preserving(&bundle, &ic, lap.h(), t).unwrap();
            for i in 0..lap.n() {
                let mut sum = 0.0;
                for j in 0..lap.n() {
                    min_entry = min_entry.min(p[(i, j)]);
                    sum += p[(i, j)];
                }
                row_dev = row_dev.max((sum - 1.0).abs());
            }
        }
        hit_dev = hit_dev.max(hitting_preservation(&lap, &ic).relative());
    }
    Outcome {
        id: 6,
        title: "structure preservation",
        passed: min_entry >= ENTRY_FLOOR && row_dev <= ROW_SUM_TOLERANCE && hit_dev <= HITTING_PRESERVATION,
        detail: format!(
            "{} fixtures x {GRID_POINTS} times; min entry {min_entry:.3e}; max |row sum - 1| {row_dev:.3e}; max relative hitting-time deviation {hit_dev:.3e}",
            cases.len()
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn integral_identity() -> Outcome {
    let start = Instant::now();
    let (mut sp, mut pr) = (0.0f64, 0.0f64);
    let cases = fixtures();
    for (chain, set) in &cases {
        let lap = symmetrize(chain).unwrap();
        let occ = integrated_occupation_check(&lap, set, markov_compress::compress::default_gamma(&lap)).unwrap();
        sp = sp.max(occ.structure_preserving);
        pr = pr.max(occ.projective);
    }
    Outcome {
        id: 7,
        title: "integral identity",
        passed: sp <= INTEGRAL_AGREEMENT && pr <= INTEGRAL_AGREEMENT,
        detail: format!("{} fixtures; max relative deviation: structure-preserving {sp:.3e}, projective {pr:.3e}", cases.len()),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn selection_guarantees() -> Outcome {
    let start = Instant::now();
    let (mut worst_margin, mut checked_a) = (f64::NEG_INFINITY, 0);
    for j in 0..20u64 {
        let n = 6 + (j as usize % 9);
        let lap = symmetrize(&random_reversible(n, 1500 + j)).unwrap();
        let trace = greedy_select(&lap, 5.min(n - 1)).unwrap();
        for s in 1..=3usize.min(n - 1) {
            let opt = brute_force_optimal(&lap, s).unwrap();
            for k in s..=trace.len() {
                worst_margin = worst_margin.max(optimality_margin(&trace, k, &opt, lap.trace_fundamental()).unwrap());
                checked_a += 1;
            }
        }
    }
    let (mut worst_slack, mut checked_b) = (f64::INFINITY, 0);
    for j in 0..10u64 {
        let n = 12 + 2 * j as usize;
        let lap = symmetrize(&random_reversible(n, 1600 + j)).unwrap();
        let trace = greedy_select(&lap, 8).unwrap();
        let spectrum = fundamental_spectrum(&lap);
        for k in 1..=8 {
            for s in 1..=k {
                for r in 0..s {
                    worst_slack = worst_slack.min(spectral_slack(&trace, &spectrum, k, s, r).unwrap());
                    checked_b += 1;
                }
            }
        }
    }
    Outcome {
        id: 8,
        title: "selection optimality",
        passed: worst_margin <= 0.0 && worst_slack >= 0.0,
        detail: format!("optimality margin max {worst_margin:.4} over {checked_a} (k, s) pairs (needs <= 0); spectral slack min {worst_slack:.4e} over {checked_b} (r, s, k) triples (needs >= 0)"),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let n = 20;
    let chain = random_reversible(n, 2024);
    let lap = symmetrize(&chain).unwrap();
    let set = IndexSet::new(n, &[2, 9, 15]).unwrap();
    let bundle = committor_closed_form(&lap, &set).unwrap();
    let seed = 79;
    let mut notes = Vec::new();
    let mut total = 0;
    let mut misses = 0;
    let mut max_z = 0.0f64;
    let mut z = |e: &markov_compress::simulate::Estimator, target: f64| {
        if e.stderr > 0.0 {
            max_z = max_z.max((e.mean - target).abs() / e.stderr);
        }
        e.within(target, SIGMAS)
    };

    let est = estimate_committor(&chain, &set, MC_TRAJECTORIES, seed).unwrap();
    let mut m = 0;
    for (i, row) in est.iter().enumerate() {
        for (p, e) in row.iter().enumerate() {
            total += 1;
            if !z(e, bundle.committor[(i, p)]) {
                m += 1;
            }
        }
    }
    notes.push(format!("committor {m}/{} outside", n * set.len()));
    misses += m;

    let targets: Vec<bool> = (0..n).map(|s| set.contains(s)).collect();
    let exact = mean_absorption_times(&chain, &set).unwrap();
    let mut m = 0;
    for (idx, &s) in set.complement().iter().enumerate() {
        let fp = estimate_first_passage(&chain, s, &targets, MC_TRAJECTORIES, seed + 100 + idx as u64).unwrap();
        total += 1;
        if !z(&fp.time, exact[s]) {
            m += 1;
        }
    }
    notes.push(format!("hitting {m}/{} outside", set.complement().len()));
    misses += m;

    let (k, i) = (set.complement()[0], set.members()[0]);
    let target = cycle_ratio_exact(&lap, k, i, &set).unwrap();
    let ht = hitting_times(&lap);
    let horizon = 2000.0 * (ht.times[(k, i)] + ht.times[(i, k)]);
    let cycles = estimate_cycle_counts(&chain, k, i, &set, horizon, 50, seed + 200).unwrap();
    let weighted = target * bundle.committor[(k, 0)];
    let cycle_ok = cycles.nested && cycles.member_cycles <= cycles.set_cycles && weighted <= 1.0 && z(&cycles.ratio, target);
    let weighted_ok = z(&cycles.weighted_ratio, weighted);
    total += 2;
    misses += usize::from(!cycle_ok) + usize::from(!weighted_ok);
    notes.push(format!(
        "cycle ratio {:.4} +- {:.4} vs {target:.4}; first-hit ratio {:.4} +- {:.4} vs {weighted:.4}; nested {}",
        cycles.ratio.mean, cycles.ratio.stderr, cycles.weighted_ratio.mean, cycles.weighted_ratio.stderr, cycles.nested
    ));

    let mc = build_marked(&chain, &bundle).unwrap();
    let unit = lap.trace_fundamental() / n as f64;
    let grid = markov_compress::linalg::log_grid(1e-2 * unit, 10.0 * unit, 8);
    let exact = reduced_marked_propagator(&mc, &bundle.h_hat, &grid).unwrap();
    let est = estimate_reduced_dynamics(&mc, &bundle.h_hat, &grid, MC_TRAJECTORIES, seed + 300).unwrap();
    let mut m = 0;
    for (ti, tab) in est.curves.iter().enumerate() {
        for a in 0..set.len() {
            for b in 0..set.len() {
                total += 1;
                if !z(&tab[a][b], exact[ti][(a, b)]) {
                    m += 1;
                }
            }
        }
    }
    notes.push(format!("reduced dynamics {m}/{} outside", grid.len() * set.len() * set.len()));
    misses += m;

    Outcome {
        id: 9,
        title: "Monte-Carlo corroboration",
        passed: misses == 0,
        detail: format!("n={n}, {MC_TRAJECTORIES} trajectories, {total} estimates at {SIGMAS} sigma, max |z| {max_z:.2}: {}", notes.join("; ")),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn run_cli(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mcompress")).args(args).output().expect("binary runs");
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    let n = 2000;
    let adjacency = synthetic_webgraph(n, n / 100, 3, 1);
    let input = dir.join("webgraph.mtx");
    let coo = CooMatrix { nrows: n, ncols: n, entries: adjacency };
    write_atomic(&input, format_matrix_market(&coo, Symmetry::Symmetric).as_bytes()).unwrap();
    let out = dir.join("run");
    let (ok_select, err_select) = run_cli(&["select", "--input", input.to_str().unwrap(), "--k", "100", "-o", out.to_str().unwrap()]);
    let mut detail = Vec::new();
    let mut passed = ok_select;
    if !ok_select {
        detail.push(format!("select failed: {}", err_select.trim()));
    } else {
        let mut reader = csv::Reader::from_path(out.join("selection_curves.csv")).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        let (ie, ilb) = (col("eps_nuc"), col("spectral_lower_bound"));
        let (_, _, _) = (col("eps2"), col("psi2"), col("psi_nuc"));
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        let margin = rows.iter().map(|r| r[ie].parse::<f64>().unwrap() - r[ilb].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
        passed &= rows.len() == 100 && margin >= 0.0;
        detail.push(format!("{} curve rows, min eps* - tail sum {margin:.4}", rows.len()));
    }
    let (ok_compress, err_compress) = run_cli(&["compress", "--input", input.to_str().unwrap(), "--k", "5", "-o", out.to_str().unwrap()]);
    passed &= ok_compress;
    if ok_compress {
        let rows = csv::Reader::from_path(out.join("bound_report.csv")).unwrap().records().count();
        passed &= rows == GRID_POINTS;
        detail.push(format!("bound report {rows} rows, no violations"));
    } else {
        detail.push(format!("compress failed: {}", err_compress.trim()));
    }
    Outcome { id: 10, title: "end-to-end CLI on 2000-node webgraph", passed, detail: detail.join("; "), seconds: start.elapsed().as_secs_f64() }
}

fn print_outcome(o: &Outcome) {
    println!("{} criterion {:>2} {} ({:.1}s): {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.title, o.seconds, o.detail);
}

fn main() {
    // Accept and ignore libtest arguments such as `--nocapture`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |id: u8| filter.is_empty() || filter.iter().any(|f| f == &id.to_string());
    let dir = tempfile::tempdir().unwrap();
    let mut outcomes = Vec::new();
    if want(1) || want(2) {
        for o in bound_suites() {
            print_outcome(&o);
            outcomes.push(o);
        }
    }
    type Runner<'a> = (u8, Box<dyn Fn() -> Outcome + 'a>);
    let runners: Vec<Runner<'_>> = vec![
        (3, Box::new(obliqueness_identities)),
        (4, Box::new(marked_identities)),
        (5, Box::new(committor_equivalence)),
        (6, Box::new(structure_preservation)),
        (7, Box::new(integral_identity)),
        (8, Box::new(selection_guarantees)),
        (9, Box::new(monte_carlo)),
        (10, Box::new(|| end_to_end(dir.path()))),
    ];
    for (id, run) in runners {
        if want(id) {
            let o = run();
            print_outcome(&o);
            outcomes.push(o);
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
