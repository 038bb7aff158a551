//! Random graph instances, planted permutations, and the degree-preserving
//! edge-flip noise model.
//!
//! A planted sample is a pair `(G1, G2)` with known ground truth: `G2` is a
//! relabelled copy of `G1` with every edge deleted with probability `p_e`
//! and every non-edge inserted with probability `p_e2 = p_e * p / (1 - p)`,
//! the unique insertion rate that keeps expected degrees unchanged.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Symmetric adjacency matrix on `n` nodes. Entries are 0/1 for the graph
/// generators in this module; weighted symmetric matrices are permitted for
/// the landscape experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adj: Array2<f64>,
}

impl Graph {
    /// Wraps an adjacency matrix, enforcing symmetry.
    pub fn new(adj: Array2<f64>) -> Result<Self> {
        let (r, c) = adj.dim();
        if r != c {
            return Err(Error::Parameter(format!(
                "adjacency must be square, got {r}x{c}"
            )));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if adj[[i, j]] != adj[[j, i]] {
                    return Err(Error::Parameter(format!(
                        "adjacency not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { n: r, adj })
    }

    /// Simple graph from an edge list over nodes `0..n`; each unordered pair
    /// is mirrored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Parameter(format!("bad edge ({i},{j}) for n={n}")));
            }
            adj[[i, j]] = 1.0;
            adj[[j, i]] = 1.0;
        }
        Ok(Self { n, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adj(&self) -> &Array2<f64> {
        &self.adj
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adj.row(i).sum()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    /// Number of edges (for 0/1 graphs).
    pub fn edge_count(&self) -> usize {
        (self.adj.sum() / 2.0).round() as usize
    }

    /// Unordered edge list with `i < j`, in row-major scan order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adj[[i, j]] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// A bijection on `{0..n-1}`, stored as its image array: node `i` maps to
/// `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(Error::Parameter(format!("not a bijection on 0..{n}")));
            }
            seen[v] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    /// Composition `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Parameter("permutation sizes differ".into()));
        }
        Ok(Self {
            map: other.map.iter().map(|&v| self.map[v]).collect(),
        })
    }

    /// The permutation matrix `X` with `X[i][map(i)] = 1`, so relabelling a
    /// graph is `Xᵀ A X`.
    pub fn matrix(&self) -> Array2<f64> {
        let n = self.map.len();
        let mut x = Array2::zeros((n, n));
        for (i, &v) in self.map.iter().enumerate() {
            x[[i, v]] = 1.0;
        }
        x
    }
}

/// Edge-flip noise parameters. `p_e2` is derived so the expected edge
/// density of the perturbed graph stays at the base density `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p_e: f64,
    pub p: f64,
    pub p_e2: f64,
}

impl NoiseSpec {
    pub fn new(p_e: f64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_e) {
            return Err(Error::Parameter(format!("p_e={p_e} outside [0,1]")));
        }
        if !(0.0..1.0).contains(&p) || p == 0.0 {
            return Err(Error::Parameter(format!(
                "base density p={p} outside (0,1)"
            )));
        }
        let p_e2 = p_e * p / (1.0 - p);
        if p_e2 > 1.0 {
            return Err(Error::Parameter(format!(
                "derived insertion probability p_e2={p_e2} exceeds 1"
            )));
        }
        Ok(Self { p_e, p, p_e2 })
    }
}

/// Erdos-Renyi graph: each unordered pair is an edge independently with
/// probability `p`. Deterministic given the seed.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("p={p} outside [0,1]")));
    }
    let mut rng = seed::rng(seed);
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                adj[[i, j]] = 1.0;
                adj[[j, i]] = 1.0;
            }
        }
    }
    Ok(Graph { n, adj })
}

const REGULAR_RETRY_BUDGET: usize = 1000;

/// Random `deg`-regular simple graph by degree-restricted stub matching:
/// repeatedly connect a pair of unsaturated, non-adjacent nodes drawn with
/// probability proportional to their free stub counts, restarting if the
/// process wedges with stubs left over. Restarts are rare for `deg` well
/// below `n`; a full restart budget exhaustion means the inputs are outside
/// that regime.
pub fn random_regular(n: usize, deg: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    if deg >= n {
        return Err(Error::Parameter(format!(
            "degree {deg} must be below n={n}"
        )));
    }
    if !(n * deg).is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "n*deg = {} is odd; no {deg}-regular graph on {n} nodes",
            n * deg
        )));
    }
    let mut rng = seed::rng(seed);
    'attempt: for _ in 0..REGULAR_RETRY_BUDGET {
        let mut adj: Array2<f64> = Array2::zeros((n, n));
        let mut stubs = vec![deg; n];
        for _ in 0..n * deg / 2 {
            // All currently legal pairs, weighted by free stub products.
            let mut pairs = Vec::new();
            let mut total = 0u64;
            for u in 0..n {
                if stubs[u] == 0 {
                    continue;
                }
                for v in (u + 1)..n {
                    if stubs[v] > 0 && adj[[u, v]] == 0.0 {
                        total += (stubs[u] * stubs[v]) as u64;
                        pairs.push((u, v, total));
                    }
                }
            }
            if pairs.is_empty() {
                continue 'attempt;
            }
            let draw = rng.random_range(0..total);
            let idx = pairs.partition_point(|&(_, _, cum)| cum <= draw);
            let (u, v, _) = pairs[idx];
            adj[[u, v]] = 1.0;
            adj[[v, u]] = 1.0;
            stubs[u] -= 1;
            stubs[v] -= 1;
        }
        return Ok(Graph { n, adj });
    }
    Err(Error::Generation(format!(
        "no simple {deg}-regular graph on {n} nodes after {REGULAR_RETRY_BUDGET} attempts"
    )))
}

/// Relabels a graph: `result[pi(i)][pi(j)] = g[i][j]`.
pub fn permute(g: &Graph, pi: &Permutation) -> Result<Graph> {
    if pi.len() != g.n {
        return Err(Error::Parameter(format!(
            "permutation length {} does not match n={}",
            pi.len(),
            g.n
        )));
    }
    let mut adj = Array2::zeros((g.n, g.n));
    for i in 0..g.n {
        let pi_i = pi.apply(i);
        for j in 0..g.n {
            adj[[pi_i, pi.apply(j)]] = g.adj[[i, j]];
        }
    }
    Ok(Graph { n: g.n, adj })
}

/// Applies edge-flip noise: existing edges are removed with probability
/// `p_e`, non-edges inserted with probability `p_e2`. Flips are sampled on
/// unordered pairs and mirrored, so the output stays symmetric.
pub fn perturb(g: &Graph, spec: &NoiseSpec, seed: u64) -> Result<Graph> {
    let mut rng = seed::rng(seed);
    let mut adj = g.adj.clone();
    for i in 0..g.n {
        for j in (i + 1)..g.n {
            let draw = rng.random::<f64>();
            let new = if g.adj[[i, j]] != 0.0 {
                if draw < spec.p_e {
                    0.0
                } else {
                    1.0
                }
            } else if draw < spec.p_e2 {
                1.0
            } else {
                0.0
            };
            adj[[i, j]] = new;
            adj[[j, i]] = new;
        }
    }
    Ok(Graph { n: g.n, adj })
}

/// Which random-graph family a planted instance draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum GraphModel {
    Er { p: f64 },
    Regular { deg: usize },
}

/// Everything needed to draw one planted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    #[serde(flatten)]
    pub model: GraphModel,
    pub n: usize,
    pub p_e: f64,
    /// Plant the identity permutation instead of a uniform random one.
    #[serde(default)]
    pub identity_perm: bool,
}

impl InstanceConfig {
    /// Base edge density `p` used to derive the insertion probability; for
    /// regular graphs this is `deg / (n - 1)`.
    pub fn base_density(&self) -> f64 {
        match self.model {
            GraphModel::Er { p } => p,
            GraphModel::Regular { deg } => deg as f64 / (self.n as f64 - 1.0),
        }
    }
}

/// Draws a planted sample `(G1, G2, pi)` with `G2 = perturb(permute(G1, pi))`.
/// Generator, permutation, and noise use seeds derived from `seed`, so the
/// sample is reproducible as a whole.
pub fn make_instance(cfg: &InstanceConfig, seed: u64) -> Result<(Graph, Graph, Permutation)> {
    let g1 = match cfg.model {
        GraphModel::Er { p } => erdos_renyi(cfg.n, p, seed::derive(seed, 0))?,
        GraphModel::Regular { deg } => random_regular(cfg.n, deg, seed::derive(seed, 0))?,
    };
    let pi = if cfg.identity_perm {
        Permutation::identity(cfg.n)
    } else {
        Permutation::random(cfg.n, &mut seed::derived_rng(seed, 1))
    };
    let relabelled = permute(&g1, &pi)?;
    let g2 = if cfg.p_e == 0.0 {
        relabelled
    } else {
        let spec = NoiseSpec::new(cfg.p_e, cfg.base_density())?;
        perturb(&relabelled, &spec, seed::derive(seed, 2))?
    };
    Ok((g1, g2, pi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erdos_renyi_extremes() {
        let empty = erdos_renyi(3, 0.0, 1).unwrap();
        assert_eq!(empty.edge_count(), 0);
        let full = erdos_renyi(3, 1.0, 1).unwrap();
        assert_eq!(full.edge_count(), 3); // K_3
        for i in 0..3 {
            assert_eq!(full.adj()[[i, i]], 0.0);
        }
    }

    #[test]
    fn erdos_renyi_rejects_bad_probability() {
        assert!(matches!(erdos_renyi(3, 1.5, 0), Err(Error::Parameter(_))));
        assert!(matches!(erdos_renyi(0, 0.5, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn erdos_renyi_mean_edge_count_matches_binomial() {
        // Monte Carlo oracle: mean edge count over many seeds vs 0.2*C(50,2),
        // within 3 standard errors of the binomial.
        let (n, p, trials) = (50usize, 0.2f64, 1000usize);
        let pairs = (n * (n - 1) / 2) as f64;
        let mean: f64 = (0..trials)
            .map(|s| erdos_renyi(n, p, s as u64).unwrap().edge_count() as f64)
            .sum::<f64>()
            / trials as f64;
        let expect = p * pairs; // 245
        let se = (pairs * p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn erdos_renyi_deterministic_per_seed() {
        let a = erdos_renyi(20, 0.3, 9).unwrap();
        let b = erdos_renyi(20, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let c = erdos_renyi(20, 0.3, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn regular_k4_is_forced() {
        let g = random_regular(4, 3, 5).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(g.degrees().iter().all(|&d| d == 3.0));
    }

    #[test]
    fn regular_degree_sequences() {
        let g = random_regular(6, 2, 11).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 2.0));
        let g = random_regular(50, 10, 3).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 10.0));
        for i in 0..50 {
            assert_eq!(g.adj()[[i, i]], 0.0);
        }
    }

    #[test]
    fn regular_rejects_infeasible() {
        assert!(matches!(random_regular(5, 3, 0), Err(Error::Parameter(_))));
        assert!(matches!(random_regular(4, 4, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn permute_identity_and_reversal() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let same = permute(&g, &Permutation::identity(3)).unwrap();
        assert_eq!(g, same);
        // Reversing a path maps it onto itself.
        let rev = permute(&g, &Permutation::new(vec![2, 1, 0]).unwrap()).unwrap();
        assert_eq!(g, rev);
    }

    #[test]
    fn permute_preserves_degree_multiset() {
        let g = erdos_renyi(30, 0.3, 17).unwrap();
        let pi = Permutation::random(30, &mut seed::rng(4));
        let h = permute(&g, &pi).unwrap();
        let mut dg = g.degrees();
        let mut dh = h.degrees();
        dg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dh.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(dg, dh);
        // And node-for-node: degree of pi(i) in h equals degree of i in g.
        for i in 0..30 {
            assert_eq!(g.degree(i), h.degree(pi.apply(i)));
        }
    }

    #[test]
    fn permute_is_a_group_action() {
        let g = erdos_renyi(12, 0.4, 2).unwrap();
        let sigma = Permutation::random(12, &mut seed::rng(5));
        let tau = Permutation::random(12, &mut seed::rng(6));
        let lhs = permute(&permute(&g, &sigma).unwrap(), &tau).unwrap();
        let rhs = permute(&g, &tau.compose(&sigma).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn permute_rejects_length_mismatch() {
        let g = erdos_renyi(5, 0.5, 0).unwrap();
        let pi = Permutation::identity(4);
        assert!(matches!(permute(&g, &pi), Err(Error::Parameter(_))));
    }

    #[test]
    fn perturb_extremes() {
        let g = erdos_renyi(20, 0.3, 8).unwrap();
        let spec = NoiseSpec::new(0.0, 0.3).unwrap();
        assert_eq!(perturb(&g, &spec, 1).unwrap(), g);
        // p_e = 1 removes every original edge.
        let spec = NoiseSpec::new(1.0, 0.3).unwrap();
        let h = perturb(&g, &spec, 1).unwrap();
        for (i, j) in g.edges() {
            assert_eq!(h.adj()[[i, j]], 0.0);
        }
    }

    #[test]
    fn perturb_output_symmetric_zero_diagonal() {
        for s in 0..20 {
            let g = erdos_renyi(15, 0.25, s).unwrap();
            let spec = NoiseSpec::new(0.3, 0.25).unwrap();
            let h = perturb(&g, &spec, s + 100).unwrap();
            for i in 0..15 {
                assert_eq!(h.adj()[[i, i]], 0.0);
                for j in 0..15 {
                    assert_eq!(h.adj()[[i, j]], h.adj()[[j, i]]);
                }
            }
        }
    }

    #[test]
    fn perturb_preserves_expected_degree() {
        // Analytic expectation: p(1-p_e) + (1-p) p_e2 = p, so the mean degree
        // stays at (n-1)p = 9.8. Quick 300-sample version of the Monte Carlo
        // check; the acceptance suite runs the full 1000-sample protocol.
        let (n, p, p_e) = (50usize, 0.2f64, 0.2f64);
        let spec = NoiseSpec::new(p_e, p).unwrap();
        let trials = 300;
        let mut sum = 0.0;
        for s in 0..trials {
            let g = erdos_renyi(n, p, seed::derive(77, s)).unwrap();
            let h = perturb(&g, &spec, seed::derive(78, s)).unwrap();
            sum += 2.0 * h.edge_count() as f64 / n as f64;
        }
        let mean = sum / trials as f64;
        assert!((mean - 9.8).abs() < 0.25, "mean degree {mean}");
    }

    #[test]
    fn noise_spec_validates() {
        assert!(NoiseSpec::new(0.5, 0.8).is_err()); // p_e2 = 2 > 1
        assert!(NoiseSpec::new(-0.1, 0.2).is_err());
        assert!(NoiseSpec::new(0.1, 1.0).is_err());
        let s = NoiseSpec::new(0.4, 0.2).unwrap();
        assert!((s.p_e2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn make_instance_zero_noise_isomorphic() {
        let cfg = InstanceConfig {
            model: GraphModel::Er { p: 0.2 },
            n: 40,
            p_e: 0.0,
            identity_perm: false,
        };
        let (g1, g2, pi) = make_instance(&cfg, 123).unwrap();
        // Edge-by-edge: (i,j) in G1 iff (pi(i),pi(j)) in G2.
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(g1.adj()[[i, j]], g2.adj()[[pi.apply(i), pi.apply(j)]]);
            }
        }
    }

    #[test]
    fn make_instance_identity_no_noise_is_equal() {
        let cfg = InstanceConfig {
            model: GraphModel::Er { p: 0.3 },
            n: 25,
            p_e: 0.0,
            identity_perm: true,
        };
        let (g1, g2, pi) = make_instance(&cfg, 5).unwrap();
        assert_eq!(pi, Permutation::identity(25));
        assert_eq!(g1, g2);
    }

    #[test]
    fn make_instance_flip_count_matches_expectation() {
        // At noise p_e, each of the ~245 edges flips off w.p. p_e and each of
        // the ~980 non-edges flips on w.p. p_e2; expected differing slots
        // (counting both triangle halves) is 2*(E[edges]*p_e + E[non]*p_e2)
        // = 2*2*245*0.05 with p = 0.2 ... i.e. about 24.5 per direction pair.
        let cfg = InstanceConfig {
            model: GraphModel::Er { p: 0.2 },
            n: 50,
            p_e: 0.05,
            identity_perm: false,
        };
        let trials = 400;
        let mut sum = 0.0;
        for t in 0..trials {
            let (g1, g2, pi) = make_instance(&cfg, seed::derive(900, t)).unwrap();
            let relabelled = permute(&g1, &pi).unwrap();
            let diff: f64 = (relabelled.adj() - g2.adj()).mapv(f64::abs).sum();
            sum += diff;
        }
        let mean = sum / trials as f64;
        // E[diff slots] = 2*(245*0.05 + 980*0.0125) = 2*24.5 = 49 over all
        // ordered slots, i.e. about 24.5 unordered flips.
        assert!(
            (mean / 2.0 - 24.5).abs() < 2.0,
            "mean unordered flips {}",
            mean / 2.0
        );
    }

    #[test]
    fn permutation_validation_and_inverse() {
        assert!(Permutation::new(vec![0, 0, 2]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        let pi = Permutation::new(vec![2, 0, 1]).unwrap();
        let inv = pi.inverse();
        let id = pi.compose(&inv).unwrap();
        assert_eq!(id, Permutation::identity(3));
    }
}
