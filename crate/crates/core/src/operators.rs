//! The generator family of graph-intrinsic linear operators.
//!
//! For a graph on `n` nodes the family is the ordered list
//! `[I, D, A, A_1, ..., A_J, U]`:
//!
//! - `I` the identity,
//! - `D` the diagonal degree operator,
//! - `A` the adjacency operator (neighbor sum),
//! - `A_j = min(1, A^(2^j))` the thresholded adjacency powers, which reach
//!   `2^j`-hop neighborhoods,
//! - `U` the global average with every entry `1/n`.
//!
//! The ordering is fixed and is part of the model serialization contract.
//! All operators are symmetric and permutation-equivariant; `U` is
//! permutation-invariant.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::graphgen::Graph;

/// Ordered list of dense `n x n` operators, materialized once per graph and
/// shared read-only across layers and threads.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    ops: Vec<Array2<f64>>,
    j_powers: usize,
    n: usize,
}

impl OperatorFamily {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j_powers(&self) -> usize {
        self.j_powers
    }

    pub fn op(&self, idx: usize) -> &Array2<f64> {
        &self.ops[idx]
    }

    pub fn ops(&self) -> &[Array2<f64>] {
        &self.ops
    }

    /// Stable names in family order, used for checkpoint keys.
    pub fn names(j_powers: usize) -> Vec<String> {
        let mut names = vec!["id".to_string(), "deg".to_string(), "adj".to_string()];
        for j in 1..=j_powers {
            names.push(format!("pow{j}"));
        }
        names.push("avg".to_string());
        names
    }

    /// Family size for a given power count: I, D, A, A_1..A_J, U.
    pub fn size_for(j_powers: usize) -> usize {
        4 + j_powers
    }

    /// All operators stacked vertically into one `(len*n) x n` matrix, so a
    /// GNN layer can apply the whole family with a single product.
    pub fn stacked(&self) -> Array2<f64> {
        let m = self.ops.len();
        let mut out = Array2::zeros((m * self.n, self.n));
        for (b, op) in self.ops.iter().enumerate() {
            out.slice_mut(s![b * self.n..(b + 1) * self.n, ..])
                .assign(op);
        }
        out
    }
}

/// Builds `[I, D, A, A_1..A_J, U]` for a graph. `A_j` thresholds the true
/// power `A^(2^j)`, so diagonals picked up through closed walks stay.
pub fn build_family(g: &Graph, j_powers: usize) -> OperatorFamily {
    let n = g.n();
    let a = g.adj().clone();

    let identity = Array2::eye(n);
    let mut degree = Array2::zeros((n, n));
    for i in 0..n {
        degree[[i, i]] = g.degree(i);
    }
    let average = Array2::from_elem((n, n), 1.0 / n as f64);

    let mut ops = Vec::with_capacity(OperatorFamily::size_for(j_powers));
    ops.push(identity);
    ops.push(degree);
    ops.push(a.clone());
    // Threshold-then-square: min(1, A^(2^(j+1))) has the same support as the
    // square of min(1, A^(2^j)), and the thresholded intermediates cannot
    // overflow for any J.
    let mut power = a;
    for _ in 0..j_powers {
        power = threshold(&power.dot(&power));
        ops.push(power.clone());
    }
    ops.push(average);

    OperatorFamily { ops, j_powers, n }
}

fn threshold(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Applies `ops[idx]` to an `n x d` feature matrix.
pub fn apply(fam: &OperatorFamily, idx: usize, features: &Array2<f64>) -> Result<Array2<f64>> {
    if idx >= fam.len() {
        return Err(Error::Parameter(format!(
            "operator index {idx} out of range for family of {}",
            fam.len()
        )));
    }
    if features.nrows() != fam.n {
        return Err(Error::Shape(format!(
            "features have {} rows, operators are {}x{}",
            features.nrows(),
            fam.n,
            fam.n
        )));
    }
    Ok(fam.op(idx).dot(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{erdos_renyi, permute, Permutation};
    use crate::seed;
    use ndarray::array;

    fn p3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn family_size_and_order() {
        let fam = build_family(&p3(), 2);
        assert_eq!(fam.len(), 6);
        assert_eq!(
            OperatorFamily::names(2),
            vec!["id", "deg", "adj", "pow1", "pow2", "avg"]
        );
        assert_eq!(fam.op(0), &Array2::<f64>::eye(3));
    }

    #[test]
    fn degree_operator_on_path() {
        let fam = build_family(&p3(), 0);
        let d = fam.op(1);
        assert_eq!(
            d,
            &array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn thresholded_square_on_path() {
        // Dense matrix-multiply oracle: A^2 for the path 0-1-2, thresholded.
        let fam = build_family(&p3(), 1);
        let a = fam.op(2);
        let a2 = a.dot(a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        assert_eq!(fam.op(3), &a2);
        assert_eq!(
            fam.op(3),
            &array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn thresholded_powers_match_true_powers() {
        // For random graphs, min(1, A^(2^j)) computed from the literal dense
        // power must agree with the threshold-then-square construction.
        for s in 0..5 {
            let g = erdos_renyi(14, 0.15, s).unwrap();
            let fam = build_family(&g, 2);
            let a = g.adj();
            let a2 = a.dot(a);
            let a4 = a2.dot(&a2);
            let lit1 = a2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let lit2 = a4.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            assert_eq!(fam.op(3), &lit1);
            assert_eq!(fam.op(4), &lit2);
        }
    }

    #[test]
    fn average_preserves_constants_and_means() {
        let g = erdos_renyi(8, 0.4, 3).unwrap();
        let fam = build_family(&g, 0);
        let u_idx = fam.len() - 1;
        let c = Array2::from_elem((8, 1), 2.5);
        let out = apply(&fam, u_idx, &c).unwrap();
        for v in out.iter() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        // Every row of U F equals the column means of F.
        let f = Array2::from_shape_fn((8, 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 1.0);
        let out = apply(&fam, u_idx, &f).unwrap();
        for j in 0..3 {
            let mean = f.column(j).sum() / 8.0;
            for i in 0..8 {
                assert!((out[[i, j]] - mean).abs() < 1e-12);
            }
        }
        // Row sums of U are 1.
        assert!((fam.op(u_idx).row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_adjacency_apply() {
        let fam = build_family(&p3(), 0);
        let f = array![[1.0], [1.0], [1.0]];
        assert_eq!(apply(&fam, 0, &f).unwrap(), f);
        let out = apply(&fam, 2, &f).unwrap();
        assert_eq!(out, array![[1.0], [2.0], [1.0]]);
    }

    #[test]
    fn apply_rejects_bad_shapes() {
        let fam = build_family(&p3(), 0);
        let f = Array2::zeros((4, 2));
        assert!(matches!(apply(&fam, 0, &f), Err(Error::Shape(_))));
        assert!(matches!(
            apply(&fam, 9, &Array2::zeros((3, 1))),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn operators_are_permutation_equivariant() {
        // operator(permute(g)) == P operator(g) Pᵀ entrywise, exactly.
        let g = erdos_renyi(12, 0.3, 21).unwrap();
        let pi = Permutation::random(12, &mut seed::rng(7));
        let h = permute(&g, &pi).unwrap();
        let p = pi.matrix();
        let fam_g = build_family(&g, 2);
        let fam_h = build_family(&h, 2);
        let u_idx = fam_g.len() - 1;
        for idx in 0..fam_g.len() - 1 {
            // permute() is Pᵀ A P for X[i][pi(i)]=1, so conjugate with Pᵀ.
            let conj = p.t().dot(fam_g.op(idx)).dot(&p);
            assert_eq!(fam_h.op(idx), &conj, "operator {idx}");
        }
        assert_eq!(fam_h.op(u_idx), fam_g.op(u_idx));
    }

    #[test]
    fn stacked_layout_matches_family_order() {
        let g = erdos_renyi(6, 0.5, 2).unwrap();
        let fam = build_family(&g, 1);
        let stacked = fam.stacked();
        for b in 0..fam.len() {
            let block = stacked.slice(s![b * 6..(b + 1) * 6, ..]);
            assert_eq!(&block.to_owned(), fam.op(b));
        }
    }
}
