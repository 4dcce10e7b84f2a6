use markov_compress::chain::symmetrize;
use markov_compress::committor::{committor_absorbing_solve, committor_closed_form, hitting_times};
use markov_compress::compress::{nystrom_errors, nystrom_nuclear, obliqueness, NormMethod};
use markov_compress::fixtures::random_reversible;
use markov_compress::induced::{induced_chain, induced_from_k};
use markov_compress::io::{chain_to_matrix_market, load_chain, InputFormat};
use markov_compress::linalg::{max_abs, max_abs_diff};
use markov_compress::marked::{build_marked, identity_suite, projections};
use markov_compress::select::{fundamental_spectrum, greedy_select, schur_trace};
use markov_compress::subset::IndexSet;
use proptest::prelude::*;
use proptest::sample::subsequence;

/// `(n, chain seed, sorted selection)` with `1 ≤ |I| < n`.
fn instance(max_n: usize) -> impl Strategy<Value = (usize, u64, Vec<usize>)> {
    (3usize..=max_n).prop_flat_map(|n| (Just(n), any::<u64>(), subsequence((0..n).collect::<Vec<_>>(), 1..n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn obliqueness_formulas_agree_and_are_bounded((n, seed, idx) in instance(30)) {
        let lap = symmetrize(&random_reversible(n, seed)).unwrap();
        let set = IndexSet::new(n, &idx).unwrap();
        let psi = obliqueness(&lap, &set).unwrap();
        let eps = nystrom_nuclear(&lap, &set).unwrap();
        prop_assert!((psi.psi_nuc - psi.psi_nuc_hitting).abs() <= 1e-7 * psi.psi_nuc.abs().max(1e-300));
        prop_assert!(psi.psi_nuc >= -1e-12 && psi.psi2 >= -1e-12);
        prop_assert!(psi.psi_nuc <= idx.len() as f64 * eps * (1.0 + 1e-10));
    }

    #[test]
    fn nystrom_error_shrinks_under_augmentation((n, seed, idx) in instance(25)) {
        let lap = symmetrize(&random_reversible(n, seed)).unwrap();
        let set = IndexSet::new(n, &idx).unwrap();
        let base = nystrom_errors(&lap, &set, NormMethod::Dense).unwrap();
        prop_assert!(base.eps2 <= base.eps_nuc * (1.0 + 1e-8));
        prop_assert!((base.eps_nuc - base.eps_nuc_schur).abs() <= 1e-8 * base.eps_nuc);
        for &extra in set.complement() {
            let mut grown = idx.clone();
            grown.push(extra);
            grown.sort_unstable();
            let e = nystrom_nuclear(&lap, &IndexSet::new(n, &grown).unwrap()).unwrap();
            prop_assert!(e <= base.eps_nuc * (1.0 + 1e-8));
        }
    }

    #[test]
    fn committor_forms_agree((n, seed, idx) in instance(40)) {
        let chain = random_reversible(n, seed);
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(n, &idx).unwrap();
        let closed = committor_closed_form(&lap, &set).unwrap();
        let oracle = committor_absorbing_solve(&chain, &set).unwrap();
        prop_assert!(max_abs_diff(closed.committor.as_ref(), oracle.as_ref()) <= 1e-9);
        for i in 0..n {
            let row: f64 = (0..idx.len()).map(|p| closed.committor[(i, p)]).sum();
            prop_assert!((row - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn induced_constructions_agree((n, seed, idx) in instance(30)) {
        let chain = random_reversible(n, seed);
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(n, &idx).unwrap();
        let bundle = committor_closed_form(&lap, &set).unwrap();
        let a = induced_chain(&chain, &bundle).unwrap();
        let b = induced_from_k(&lap, &set).unwrap();
        let scale = max_abs(a.rates.as_ref()).max(1.0);
        prop_assert!(max_abs_diff(a.rates.as_ref(), b.rates.as_ref()) <= 1e-10 * scale);
        for i in 0..idx.len() {
            for j in 0..idx.len() {
                if i != j {
                    prop_assert!(a.laplacian[(i, j)] <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn marked_identities_hold((n, seed, idx) in instance(20)) {
        let chain = random_reversible(n, seed);
        let lap = symmetrize(&chain).unwrap();
        let set = IndexSet::new(n, &idx).unwrap();
        let bundle = committor_closed_form(&lap, &set).unwrap();
        let ic = induced_chain(&chain, &bundle).unwrap();
        let mc = build_marked(&chain, &bundle).unwrap();
        let proj = projections(&mc, &bundle, &lap, None).unwrap();
        let report = identity_suite(&mc, &proj, &lap, &ic).unwrap();
        for c in &report.checks {
            prop_assert!(c.residual <= 1e-9, "{} = {:e}", c.name, c.residual);
        }
    }

    #[test]
    fn propagator_is_a_semigroup(n in 2usize..25, seed in any::<u64>(), s in 0.01f64..5.0, t in 0.01f64..5.0) {
        let lap = symmetrize(&random_reversible(n, seed)).unwrap();
        let ps = lap.propagator(s).unwrap();
        let pt = lap.propagator(t).unwrap();
        let pst = lap.propagator(s + t).unwrap();
        prop_assert!(max_abs_diff(pst.as_ref(), (&ps * &pt).as_ref()) <= 1e-10);
        let h = lap.h();
        let mass: f64 = (0..n).map(|i| (0..n).map(|j| h[i] * pt[(i, j)] * h[j]).sum::<f64>()).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn hitting_times_are_consistent(n in 2usize..30, seed in any::<u64>()) {
        let lap = symmetrize(&random_reversible(n, seed)).unwrap();
        let ht = hitting_times(&lap);
        for i in 0..n {
            prop_assert!(ht.times[(i, i)].abs() <= 1e-10 * ht.times[(0, n - 1)].abs().max(1.0));
            for j in 0..n {
                prop_assert!(ht.times[(i, j)] >= -1e-10);
            }
        }
    }

    #[test]
    fn greedy_trace_matches_scratch(n in 4usize..30, seed in any::<u64>(), frac in 0.2f64..0.9) {
        let lap = symmetrize(&random_reversible(n, seed)).unwrap();
        let k = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let trace = greedy_select(&lap, k).unwrap();
        prop_assert_eq!(trace.len(), k);
        let mut seen = trace.ordered.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
        prop_assert!(trace.eps_nuc.windows(2).all(|w| w[1] < w[0]));
        let spectrum = fundamental_spectrum(&lap);
        for j in 1..=k {
            let scratch = schur_trace(&lap, &trace.prefix(n, j).unwrap()).unwrap();
            prop_assert!((scratch - trace.eps_nuc[j - 1]).abs() <= 1e-9 * scratch);
            let tail: f64 = spectrum.iter().skip(j + 1).sum();
            prop_assert!(trace.eps_nuc[j - 1] >= tail * (1.0 - 1e-10));
        }
    }

    #[test]
    fn rates_round_trip_through_matrix_market(n in 2usize..40, seed in any::<u64>()) {
        let chain = random_reversible(n, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.mtx");
        std::fs::write(&path, chain_to_matrix_market(&chain)).unwrap();
        let back = load_chain(&path, InputFormat::MatrixMarketRates).unwrap();
        prop_assert!(max_abs_diff(chain.rate_matrix().as_ref(), back.rate_matrix().as_ref()) <= 1e-14);
    }
}
