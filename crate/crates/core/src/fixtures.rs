//! Named small chains and seeded random generators.
//!
//! `k3` and `p2` are the two hand-checkable chains used throughout the tests.
//! The random generators produce connected reversible chains with a spread of
//! stationary weights and conductances, and a community-structured
//! preferential-attachment graph standing in for a crawled webgraph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::chain::{build_chain, webgraph_chain, ReversibleChain};

/// Complete graph on three states with unit rates.
pub fn k3() -> ReversibleChain {
    let rates: Vec<_> = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j, 1.0))).collect();
    build_chain(3, &rates, None).expect("valid fixture")
}

/// Two states with `R = [[−1, 1], [2, −2]]`, so `π = (2/3, 1/3)`.
pub fn p2() -> ReversibleChain {
    build_chain(2, &[(0, 1, 1.0), (1, 0, 2.0)], None).expect("valid fixture")
}

/// Symmetric adjacency triplets of the star with center 0.
pub fn star_adjacency(n: usize) -> Vec<(usize, usize, f64)> {
    (1..n).flat_map(|leaf| [(0, leaf, 1.0), (leaf, 0, 1.0)]).collect()
}

/// Symmetric adjacency triplets of the path `0 – 1 – … – n−1`.
pub fn path_adjacency(n: usize) -> Vec<(usize, usize, f64)> {
    (1..n).flat_map(|i| [(i - 1, i, 1.0), (i, i - 1, 1.0)]).collect()
}

/// Connected reversible chain with random conductances and stationary weights.
///
/// A random spanning tree guarantees connectivity; roughly `2n` extra edges
/// are sprinkled on top. Conductances and stationary weights are log-uniform
/// over about two decades, and `R_ij = c_ij / π_i`.
pub fn random_reversible(n: usize, seed: u64) -> ReversibleChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    let extra = if n > 2 { 2 * n } else { 0 };
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-2.3f64..2.3).exp()).collect();
    let total: f64 = weights.iter().sum();
    let pi: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut edge_list: Vec<_> = edges.into_iter().collect();
    edge_list.sort_unstable();
    let scale = n as f64;
    let mut rates = Vec::with_capacity(2 * edge_list.len());
    for (a, b) in edge_list {
        let c = rng.random_range(-2.3f64..2.3).exp() / scale;
        rates.push((a, b, c / pi[a]));
        rates.push((b, a, c / pi[b]));
    }
    build_chain(n, &rates, Some(&renormalized(&pi))).expect("generator produces valid chains")
}

fn renormalized(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}

/// Community-structured preferential-attachment graph, as symmetric 0/1 triplets.
///
/// Vertex `i` joins community `i mod communities` and attaches to up to
/// `edges_per_vertex` earlier vertices, choosing targets proportionally to
/// degree, inside its own community with probability 0.9.
pub fn synthetic_webgraph(n: usize, communities: usize, edges_per_vertex: usize, seed: u64) -> Vec<(usize, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let communities = communities.max(1);
    let mut endpoints_by_comm: Vec<Vec<usize>> = vec![Vec::new(); communities];
    let mut endpoints: Vec<usize> = Vec::new();
    let mut neighbors: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for i in 1..n {
        let comm = i % communities;
        let want = edges_per_vertex.min(i);
        let mut attempts = 0;
        while neighbors[i].len() < want && attempts < 50 * want {
            attempts += 1;
            let pool = if rng.random_bool(0.9) && !endpoints_by_comm[comm].is_empty() { &endpoints_by_comm[comm] } else { &endpoints };
            let target = if pool.is_empty() || rng.random_bool(0.1) { rng.random_range(0..i) } else { pool[rng.random_range(0..pool.len())] };
            if target != i && neighbors[i].insert(target) {
                neighbors[target].insert(i);
                for v in [i, target] {
                    endpoints.push(v);
                    endpoints_by_comm[v % communities].push(v);
                }
            }
        }
        if neighbors[i].is_empty() {
            let target = rng.random_range(0..i);
            neighbors[i].insert(target);
            neighbors[target].insert(i);
        }
    }
    let mut out = Vec::new();
    for (i, nb) in neighbors.iter().enumerate() {
        let mut sorted: Vec<_> = nb.iter().copied().collect();
        sorted.sort_unstable();
        out.extend(sorted.into_iter().map(|j| (i, j, 1.0)));
    }
    out
}

/// Random-walk chain on [`synthetic_webgraph`].
pub fn synthetic_webgraph_chain(n: usize, seed: u64) -> ReversibleChain {
    let communities = (n / 100).max(2);
    webgraph_chain(n, &synthetic_webgraph(n, communities, 3, seed)).expect("generator produces connected graphs")
}
