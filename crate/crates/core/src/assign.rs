//! Exact linear assignment and QAP objective evaluation.
//!
//! The solver is the O(n^3) shortest-augmenting-path formulation of the
//! Hungarian method with dual potentials. Ties are broken by the first
//! augmenting path found under a fixed scan order, so results are
//! deterministic.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graphgen::{Graph, Permutation};

/// Square matrix of assignment costs.
pub type CostMatrix = Array2<f64>;

/// Minimizes `sum_i C[i][sigma(i)]` over permutations. Returns the argmin
/// and its exactly-optimal total cost.
pub fn lap_solve(costs: &CostMatrix) -> Result<(Permutation, f64)> {
    let (rows, cols) = costs.dim();
    if rows != cols {
        return Err(Error::Parameter(format!(
            "cost matrix must be square, got {rows}x{cols}"
        )));
    }
    if costs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(
            "cost matrix has non-finite entries".into(),
        ));
    }
    let n = rows;
    if n == 0 {
        return Ok((Permutation::identity(0), 0.0));
    }

    // 1-based arrays with a virtual column 0, after the classic successive
    // shortest path formulation. p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut map = vec![0usize; n];
    for j in 1..=n {
        map[p[j] - 1] = j - 1;
    }
    let perm = Permutation::new(map)?;
    let cost = (0..n).map(|i| costs[[i, perm.apply(i)]]).sum();
    Ok((perm, cost))
}

/// Both QAP objective readings for a candidate permutation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QapObjective {
    /// trace(A X B Xᵀ), the form to maximize.
    pub trace: f64,
    /// ||AX - XB||_F^2, the alignment form to minimize; zero exactly when X
    /// is an isomorphism between A and B.
    pub frobenius: f64,
}

/// Evaluates trace(A X B Xᵀ) and ||AX - XB||_F^2 for the permutation matrix
/// `X` with `X[i][pi(i)] = 1`.
pub fn qap_objective(a: &Graph, b: &Graph, pi: &Permutation) -> Result<QapObjective> {
    let n = a.n();
    if b.n() != n || pi.len() != n {
        return Err(Error::Parameter(format!(
            "size mismatch: A is {n}, B is {}, permutation is {}",
            b.n(),
            pi.len()
        )));
    }
    // With X[i][pi(i)] = 1: (A X)[i][pi(j)] = A[i][j] and
    // (X B)[i][pi(j)] = B[pi(i)][pi(j)], so both objectives reduce to sums
    // over index pairs without materializing X.
    let (aa, bb) = (a.adj(), b.adj());
    let mut trace = 0.0;
    let mut frob = 0.0;
    for i in 0..n {
        let pi_i = pi.apply(i);
        for j in 0..n {
            let pi_j = pi.apply(j);
            trace += aa[[i, j]] * bb[[pi_i, pi_j]];
            let diff = aa[[i, j]] - bb[[pi_i, pi_j]];
            frob += diff * diff;
        }
    }
    Ok(QapObjective {
        trace,
        frobenius: frob,
    })
}
