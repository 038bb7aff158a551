//! Optimization landscape of the polynomial embedding model.
//!
//! The simplified model embeds a symmetric matrix `A` as `P_beta(A) Y`,
//! where `P_beta(A) = sum_j beta_j A^j` and `Y` has i.i.d. Gaussian columns.
//! For a pair `(A, B)` the alignment loss is a quotient of quadratic forms
//! in `beta` built from the moment matrices
//! `Q(A,B)[r][s] = <A^r y, B^s y>`:
//!
//! `L(beta) = - betaᵀ Q(A,B) beta / betaᵀ (Q(A,A)+Q(B,B)) beta`.
//!
//! This module computes the sampled moment matrices, the loss and its
//! analytic gradient, the exact maximizer of the mean-field quotient
//! (Cholesky + top eigenvector), semicircle-law moments, and two
//! concentration experiments: the relative deviation of sampled quadratic
//! forms from their closed-form expectation over `Y`, and the distance
//! between the sampled loss gradient and the mean-field gradient.
//!
//! Wigner normalization: the default scaling is `A = n^(-1/2) W`, the unique
//! exponent under which the spectrum converges to `[-2, 2]` and spectral
//! averages of even powers converge to the Catalan moments; the exponent is
//! configurable.

use std::io::Write;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_nalgebra, to_nalgebra};
use crate::seed;

/// Entry magnitude beyond which Krylov iterations abort.
const OVERFLOW_LIMIT: f64 = 1e150;

/// Polynomial embedding description: degree-`d` coefficients for `k` random
/// columns drawn with entry variance `sigma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyEmbed {
    /// (d+1) x k coefficient matrix, one column of coefficients per random
    /// initialization column.
    pub beta: Array2<f64>,
    pub sigma2: f64,
}

impl PolyEmbed {
    pub fn new(beta: Array2<f64>, sigma2: f64) -> Result<Self> {
        if beta.ncols() == 0 {
            return Err(Error::Parameter("need at least one column".into()));
        }
        if !beta.iter().all(|v| v.is_finite()) || !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Parameter(
                "coefficients and sigma2 must be finite/positive".into(),
            ));
        }
        Ok(Self { beta, sigma2 })
    }

    pub fn degree(&self) -> usize {
        self.beta.nrows() - 1
    }

    pub fn columns(&self) -> usize {
        self.beta.ncols()
    }

    /// `P_beta(A) Y`, column t mapped through its own polynomial.
    pub fn embed(&self, a: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        let n = a.nrows();
        if a.ncols() != n || y.nrows() != n || y.ncols() != self.columns() {
            return Err(Error::Shape("embed: A must be n x n and Y n x k".into()));
        }
        let mut out = Array2::zeros((n, self.columns()));
        for t in 0..self.columns() {
            let yt = y.column(t).to_owned();
            let mut power = yt.clone();
            let mut acc = &power * self.beta[[0, t]];
            for j in 1..=self.degree() {
                power = a.dot(&power);
                acc = acc + &power * self.beta[[j, t]];
            }
            out.column_mut(t).assign(&acc);
        }
        Ok(out)
    }
}

/// Moment matrices of a pair `(A, B)` under one or more random columns.
/// Entries are raw inner products `<A^r y, B^s y>` summed over columns;
/// quadratic-form consumers symmetrize the cross matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrices {
    pub q_ab: Array2<f64>,
    pub q_aa: Array2<f64>,
    pub q_bb: Array2<f64>,
    /// Whether `q_ab` has already been replaced by `(Q + Qᵀ)/2`.
    pub symmetrized: bool,
    /// Number of random columns summed into the entries.
    pub columns: usize,
}

impl MomentMatrices {
    pub fn degree(&self) -> usize {
        self.q_ab.nrows() - 1
    }

    /// Symmetrized cross matrix: same quadratic form, symmetric operator.
    pub fn q_ab_sym(&self) -> Array2<f64> {
        if self.symmetrized {
            self.q_ab.clone()
        } else {
            (&self.q_ab + &self.q_ab.t()) * 0.5
        }
    }

    /// Replaces the cross matrix with its symmetric version.
    pub fn into_symmetrized(mut self) -> Self {
        self.q_ab = self.q_ab_sym();
        self.symmetrized = true;
        self
    }

    /// Denominator matrix `Q(A,A) + Q(B,B)`.
    pub fn denominator(&self) -> Array2<f64> {
        &self.q_aa + &self.q_bb
    }
}

/// Fills the moment matrices for one random column by repeated
/// multiplication: vectors `A^r y` and `B^s y` for `r, s <= d`, then all
/// pairwise inner products.
pub fn krylov_moments(
    a: &Array2<f64>,
    b: &Array2<f64>,
    y: &Array1<f64>,
    d: usize,
) -> Result<MomentMatrices> {
    let n = y.len();
    if a.dim() != (n, n) || b.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "krylov_moments: A {:?} / B {:?} vs y of length {n}",
            a.dim(),
            b.dim()
        )));
    }
    let av = krylov_vectors(a, y, d)?;
    let bv = krylov_vectors(b, y, d)?;
    let inner = |u: &Array1<f64>, v: &Array1<f64>| u.dot(v);
    let q = |xs: &[Array1<f64>], ys: &[Array1<f64>]| {
        Array2::from_shape_fn((d + 1, d + 1), |(r, s)| inner(&xs[r], &ys[s]))
    };
    Ok(MomentMatrices {
        q_ab: q(&av, &bv),
        q_aa: q(&av, &av),
        q_bb: q(&bv, &bv),
        symmetrized: false,
        columns: 1,
    })
}

fn krylov_vectors(a: &Array2<f64>, y: &Array1<f64>, d: usize) -> Result<Vec<Array1<f64>>> {
    let mut vs = Vec::with_capacity(d + 1);
    vs.push(y.clone());
    for r in 1..=d {
        let next = a.dot(&vs[r - 1]);
        if next
            .iter()
            .any(|v| v.abs() > OVERFLOW_LIMIT || !v.is_finite())
        {
            return Err(Error::Numeric(format!(
                "Krylov iterate A^{r} y exceeds {OVERFLOW_LIMIT:e}; renormalize A before \
                 computing moments"
            )));
        }
        vs.push(next);
    }
    Ok(vs)
}

/// Moment matrices summed over the columns of `Y`.
pub fn moment_matrices_summed(
    a: &Array2<f64>,
    b: &Array2<f64>,
    y: &Array2<f64>,
    d: usize,
) -> Result<MomentMatrices> {
    if y.ncols() == 0 {
        return Err(Error::Parameter("need at least one column".into()));
    }
    let mut acc: Option<MomentMatrices> = None;
    for t in 0..y.ncols() {
        let mm = krylov_moments(a, b, &y.column(t).to_owned(), d)?;
        acc = Some(match acc {
            None => mm,
            Some(prev) => MomentMatrices {
                q_ab: prev.q_ab + mm.q_ab,
                q_aa: prev.q_aa + mm.q_aa,
                q_bb: prev.q_bb + mm.q_bb,
                symmetrized: false,
                columns: prev.columns + 1,
            },
        });
    }
    Ok(acc.unwrap())
}

/// Sampled alignment loss `-(betaᵀ Q_sym(A,B) beta) / (betaᵀ (Q(A,A)+Q(B,B)) beta)`.
pub fn loss_beta(mm: &MomentMatrices, beta: &[f64]) -> Result<f64> {
    let (num, den) = loss_forms(mm, beta)?;
    Ok(-num / den)
}

/// Analytic gradient of [`loss_beta`] with respect to `beta`.
pub fn loss_beta_grad(mm: &MomentMatrices, beta: &[f64]) -> Result<Vec<f64>> {
    let (num, den) = loss_forms(mm, beta)?;
    let r = mm.q_ab_sym();
    let s = mm.denominator();
    let b = Array1::from_vec(beta.to_vec());
    let rb = r.dot(&b);
    let sb = s.dot(&b);
    // d/db (bᵀRb / bᵀSb) = 2 (Rb (bᵀSb) - Sb (bᵀRb)) / (bᵀSb)^2, negated.
    Ok((0..beta.len())
        .map(|i| -2.0 * (rb[i] * den - sb[i] * num) / (den * den))
        .collect())
}

fn loss_forms(mm: &MomentMatrices, beta: &[f64]) -> Result<(f64, f64)> {
    let d1 = mm.q_ab.nrows();
    if beta.len() != d1 {
        return Err(Error::Parameter(format!(
            "beta has length {}, moment matrices are {d1}x{d1}",
            beta.len()
        )));
    }
    let b = Array1::from_vec(beta.to_vec());
    let num = b.dot(&mm.q_ab_sym().dot(&b));
    let den = b.dot(&mm.denominator().dot(&b));
    if !(den.is_finite() && den > 0.0) {
        return Err(Error::Degenerate(format!(
            "denominator quadratic form is {den}"
        )));
    }
    Ok((num, den))
}

/// Exact maximizer of a quadratic-form quotient.
#[derive(Debug, Clone)]
pub struct MeanfieldOpt {
    pub beta: Vec<f64>,
    /// Maximal value of `betaᵀ R beta / betaᵀ S beta`.
    pub value: f64,
    /// Whether a ridge had to be added to make `S` factorizable.
    pub ridged: bool,
}

/// Maximizes `betaᵀ R beta / betaᵀ S beta` for SPD `S`: with the Cholesky
/// factorization `S = C Cᵀ`, the maximum is the top eigenvalue of
/// `C⁻¹ R C⁻ᵀ`, attained at `beta = C⁻ᵀ v` for the top eigenvector `v`.
/// If the factorization fails, a ridge of `1e-10 * trace(S)` is added once
/// (flagged in the output) before giving up.
pub fn meanfield_opt(sbar: &Array2<f64>, rbar: &Array2<f64>) -> Result<MeanfieldOpt> {
    let d1 = sbar.nrows();
    if sbar.ncols() != d1 || rbar.dim() != (d1, d1) {
        return Err(Error::Shape(
            "meanfield_opt: S and R must be square and same size".into(),
        ));
    }
    let s = to_nalgebra(sbar);
    let (chol, ridged) = match nalgebra::Cholesky::new(s.clone()) {
        Some(c) => (c, false),
        None => {
            let ridge = 1e-10 * s.trace();
            let ridged_matrix = s + DMatrix::identity(d1, d1) * ridge;
            match nalgebra::Cholesky::new(ridged_matrix) {
                Some(c) => (c, true),
                None => {
                    return Err(Error::NotSpd(format!(
                        "Cholesky failed even with ridge {ridge:e}"
                    )))
                }
            }
        }
    };
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("Cholesky factor is singular".into()))?;
    let m = &l_inv * to_nalgebra(rbar) * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (vals, vecs) = crate::linalg::sym_eigen_desc(&from_nalgebra(&m))?;
    let value = vals[0];
    let v = nalgebra::DVector::from_iterator(d1, (0..d1).map(|i| vecs[[i, 0]]));
    let beta = l_inv.transpose() * v;
    Ok(MeanfieldOpt {
        beta: beta.iter().cloned().collect(),
        value,
        ridged,
    })
}

/// m-th moment of the semicircle density on `[-2, 2]`:
/// `(1/2pi) int_{-2}^{2} x^m sqrt(4 - x^2) dx`. Zero for odd m by symmetry;
/// even moments are the Catalan numbers. Computed by composite Simpson
/// quadrature after the substitution `x = 2 sin(theta)`, which removes the
/// endpoint square-root singularity.
pub fn semicircle_moment(m: usize) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let steps = 1 << 13;
    let a = -std::f64::consts::FRAC_PI_2;
    let h = std::f64::consts::PI / steps as f64;
    let f = |theta: f64| {
        let c = theta.cos();
        (2.0 * theta.sin()).powi(m as i32) * c * c * (2.0 / std::f64::consts::PI)
    };
    let mut sum = f(a) + f(a + std::f64::consts::PI);
    for i in 1..steps {
        let x = a + i as f64 * h;
        sum += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// `[I, A, A^2, ..., A^d]`.
pub fn matrix_powers(a: &Array2<f64>, d: usize) -> Vec<Array2<f64>> {
    let n = a.nrows();
    let mut powers = Vec::with_capacity(d + 1);
    powers.push(Array2::eye(n));
    if d >= 1 {
        powers.push(a.clone());
    }
    for r in 2..=d {
        let next = powers[r - 1].dot(a);
        powers.push(next);
    }
    powers
}

fn frob_inner(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// Closed-form expectation over `Y` of `Q(A,A)` for one column:
/// `E Q(A,A)[r][s] = sigma2 * trace(A^(r+s)) = sigma2 * <A^r, A^s>_F`.
pub fn expected_qaa_from_powers(powers: &[Array2<f64>], sigma2: f64) -> Array2<f64> {
    let d1 = powers.len();
    Array2::from_shape_fn((d1, d1), |(r, s)| {
        sigma2 * frob_inner(&powers[r], &powers[s])
    })
}

/// Closed-form expectation over `Y` of `Q(A,B)` for one column:
/// `E Q(A,B)[r][s] = sigma2 * trace(A^r B^s) = sigma2 * <A^r, B^s>_F`.
pub fn expected_qab_from_powers(
    pa: &[Array2<f64>],
    pb: &[Array2<f64>],
    sigma2: f64,
) -> Array2<f64> {
    let d1 = pa.len();
    Array2::from_shape_fn((d1, d1), |(r, s)| sigma2 * frob_inner(&pa[r], &pb[s]))
}

/// Spectral averages `(1/n) sum_i lambda_i^(2m)` for `m = 1..=m_max`,
/// computed as power-sum traces through Frobenius products of even matrix
/// powers (no eigendecomposition).
pub fn spectral_even_moments(a: &Array2<f64>, m_max: usize) -> Vec<f64> {
    let n = a.nrows() as f64;
    if m_max == 0 {
        return Vec::new();
    }
    // Even powers A^(2k) for k = 1..=ceil(m_max/2); then
    // trace(A^(2m)) = <A^(2i), A^(2j)>_F with i + j = m.
    let a2 = a.dot(a);
    let mut evens = vec![a2];
    for _ in 1..m_max.div_ceil(2) {
        let next = evens.last().unwrap().dot(&evens[0]);
        evens.push(next);
    }
    (1..=m_max)
        .map(|m| {
            if m == 1 {
                frob_inner(a, a) / n
            } else {
                let i = m / 2;
                let j = m - i;
                frob_inner(&evens[i - 1], &evens[j - 1]) / n
            }
        })
        .collect()
}

/// Wigner-matrix ensemble parameters: `A = n^(-scale) W` with `W` symmetric
/// i.i.d. standard Gaussian, plus the noise level used when forming
/// `B = A + nu` (entry standard deviation `noise_level / sqrt(n)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WignerSpec {
    pub n: usize,
    pub scale: f64,
    pub noise_level: f64,
}

impl Default for WignerSpec {
    fn default() -> Self {
        Self {
            n: 100,
            scale: 0.5,
            noise_level: 0.0,
        }
    }
}

/// Symmetric matrix with i.i.d. N(0,1) entries (diagonal included), scaled
/// by `n^(-scale)`.
pub fn sample_wigner<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    sample_symmetric_gaussian(n, (n as f64).powf(-scale), rng)
}

/// Symmetric Gaussian noise with entry standard deviation
/// `noise_level / sqrt(n)`, diagonal included.
pub fn sample_symmetric_noise<R: Rng>(n: usize, noise_level: f64, rng: &mut R) -> Array2<f64> {
    sample_symmetric_gaussian(n, noise_level / (n as f64).sqrt(), rng)
}

fn sample_symmetric_gaussian<R: Rng>(n: usize, sd: f64, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.sample(StandardNormal);
            m[[i, j]] = sd * v;
            m[[j, i]] = sd * v;
        }
    }
    m
}

/// `n x k` matrix with i.i.d. N(0, sigma2) entries.
pub fn sample_gaussian_matrix<R: Rng>(n: usize, k: usize, sigma2: f64, rng: &mut R) -> Array2<f64> {
    let sd = sigma2.sqrt();
    Array2::from_shape_fn((n, k), |_| {
        let v: f64 = rng.sample(StandardNormal);
        sd * v
    })
}

/// Seeded random unit coefficient vector of length `d + 1`.
pub fn random_unit_beta(d: usize, seed_v: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_v);
    let raw: Vec<f64> = (0..=d)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            v
        })
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / norm).collect()
}

/// One row of a sweep report, in the CSV schema
/// `(n, d, k, trial_count, metric_name, mean, std, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
}

/// Writes sweep rows as CSV.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "n,d,k,trial_count,metric_name,mean,std,seed")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n, r.d, r.k, r.trials, r.metric, r.mean, r.std, r.seed
        )?;
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Relative deviation of the sampled quadratic form from its closed-form
/// expectation over `Y`, maximized over `beta_draws` random unit
/// directions.
fn eps_hat<R: Rng>(q: &Array2<f64>, expected: &Array2<f64>, beta_draws: usize, rng: &mut R) -> f64 {
    let d1 = q.nrows();
    let mut worst = 0.0f64;
    for _ in 0..beta_draws {
        let mut b = Array1::from_shape_fn(d1, |_| {
            let v: f64 = rng.sample(StandardNormal);
            v
        });
        let norm = b.dot(&b).sqrt();
        b.mapv_inplace(|v| v / norm);
        let sampled = b.dot(&q.dot(&b));
        let exact = b.dot(&expected.dot(&b));
        worst = worst.max((sampled - exact).abs() / exact);
    }
    worst
}

/// Concentration sweep over matrix sizes: for each `n`, samples Wigner
/// matrices, computes `eps_hat(n) = max_beta |betaᵀ Q(A,A) beta - betaᵀ E_Y
/// Q(A,A) beta| / betaᵀ E_Y Q(A,A) beta`, and reports its mean and standard
/// deviation over the trials. Trials run with per-index derived seeds and
/// aggregate in index order, so reports are identical for any worker count.
#[allow(clippy::too_many_arguments)]
pub fn concentration_sweep(
    spec: &WignerSpec,
    d: usize,
    k: usize,
    sizes: &[usize],
    trials: usize,
    beta_draws: usize,
    sigma2: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("sizes must be strictly ascending".into()));
    }
    if k == 0 || beta_draws == 0 {
        return Err(Error::Parameter("k and beta_draws must be positive".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let eps: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::derived_rng(seed, (si * trials + t) as u64);
                let a = sample_wigner(n, spec.scale, &mut rng);
                let y = sample_gaussian_matrix(n, k, sigma2, &mut rng);
                let mm = moment_matrices_summed(&a, &a, &y, d)?;
                let powers = matrix_powers(&a, d);
                let expected = expected_qaa_from_powers(&powers, sigma2) * k as f64;
                Ok(eps_hat(&mm.q_aa, &expected, beta_draws, &mut rng))
            })
            .collect::<Result<_>>()?;
        let (mean, std) = mean_std(&eps);
        rows.push(SweepRow {
            n,
            d,
            k,
            trials,
            metric: "eps_hat".into(),
            mean,
            std,
            seed,
        });
    }
    Ok(rows)
}

/// Distance between the sampled-loss gradient and the mean-field gradient,
/// with the two bound terms that control it.
#[derive(Debug, Clone)]
pub struct GradientGap {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    /// Mean and std of `|| grad L_hat - grad g ||`.
    pub lhs: (f64, f64),
    /// First bound term:
    /// `0.5 |1/(bᵀ S~ b) - 1/(bᵀ S b)| * || E Q(A,B) b ||`.
    pub term1: (f64, f64),
    /// Second bound term:
    /// `0.5 |L_hat| * || (1+eps) S~ b/(bᵀ S~ b) - S b/(bᵀ S b) ||`.
    pub term2: (f64, f64),
    /// Mean of the per-trial concentration level `eps`.
    pub eps: (f64, f64),
}

impl GradientGap {
    pub fn rows(&self, k: usize) -> Vec<SweepRow> {
        let row = |metric: &str, (mean, std): (f64, f64)| SweepRow {
            n: self.n,
            d: self.d,
            k,
            trials: self.trials,
            metric: metric.into(),
            mean,
            std,
            seed: self.seed,
        };
        vec![
            row("grad_gap_lhs", self.lhs),
            row("grad_gap_term1", self.term1),
            row("grad_gap_term2", self.term2),
            row("eps_hat", self.eps),
        ]
    }
}

struct GapTrial {
    sampled_mm: MomentMatrices,
    loss: f64,
    grad: Vec<f64>,
    expected_r: Array2<f64>,
    expected_s: Array2<f64>,
    eps: f64,
}

/// Samples `trials` pairs `B = A + nu`, computes the analytic gradient of
/// the sampled loss at `beta`, compares it against the gradient of the
/// mean-field quotient `g` (expectations over `Y` in closed form, over
/// `(A, B)` as the Monte Carlo mean across these same trials), and
/// evaluates both bound terms with `S~ = Q(A,A)+Q(B,B)` sampled and
/// `S = E_Y` sums per trial.
pub fn gradient_gap(
    spec: &WignerSpec,
    beta: &[f64],
    n: usize,
    trials: usize,
    sigma2: f64,
    seed: u64,
) -> Result<GradientGap> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    let d = beta
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Parameter("empty beta".into()))?;
    let b = Array1::from_vec(beta.to_vec());

    let trial_data: Vec<GapTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::derived_rng(seed, t as u64);
            let a = sample_wigner(n, spec.scale, &mut rng);
            let noise = sample_symmetric_noise(n, spec.noise_level, &mut rng);
            let bm = &a + &noise;
            let y = sample_gaussian_matrix(n, 1, sigma2, &mut rng)
                .column(0)
                .to_owned();
            let mm = krylov_moments(&a, &bm, &y, d)?;
            let loss = loss_beta(&mm, beta)?;
            let grad = loss_beta_grad(&mm, beta)?;
            let pa = matrix_powers(&a, d);
            let pb = matrix_powers(&bm, d);
            let eqaa = expected_qaa_from_powers(&pa, sigma2);
            let eqbb = expected_qaa_from_powers(&pb, sigma2);
            let eqab = expected_qab_from_powers(&pa, &pb, sigma2);
            let eps_a = (b.dot(&mm.q_aa.dot(&b)) / b.dot(&eqaa.dot(&b)) - 1.0).abs();
            let eps_b = (b.dot(&mm.q_bb.dot(&b)) / b.dot(&eqbb.dot(&b)) - 1.0).abs();
            Ok(GapTrial {
                sampled_mm: mm,
                loss,
                grad,
                expected_r: eqab,
                expected_s: &eqaa + &eqbb,
                eps: eps_a.max(eps_b),
            })
        })
        .collect::<Result<_>>()?;

    // Mean-field matrices: Monte Carlo means of the closed-form E_Y pieces.
    let d1 = d + 1;
    let mut rbar = Array2::<f64>::zeros((d1, d1));
    let mut sbar = Array2::<f64>::zeros((d1, d1));
    for t in &trial_data {
        rbar += &t.expected_r;
        sbar += &t.expected_s;
    }
    rbar /= trials as f64;
    sbar /= trials as f64;
    let rbar_sym = (&rbar + &rbar.t()) * 0.5;

    let mf = MomentMatrices {
        q_ab: rbar_sym.clone(),
        q_aa: sbar.clone(),
        q_bb: Array2::zeros((d1, d1)),
        symmetrized: true,
        columns: 1,
    };
    let grad_g = loss_beta_grad(&mf, beta)?;
    let sbar_b = sbar.dot(&b);
    let sbar_form = b.dot(&sbar_b);
    let rbar_b_norm = rbar_sym.dot(&b).dot(&rbar_sym.dot(&b)).sqrt();

    let mut lhs = Vec::with_capacity(trials);
    let mut term1 = Vec::with_capacity(trials);
    let mut term2 = Vec::with_capacity(trials);
    let mut eps_all = Vec::with_capacity(trials);
    for t in &trial_data {
        let dist = t
            .grad
            .iter()
            .zip(&grad_g)
            .map(|(a, g)| (a - g) * (a - g))
            .sum::<f64>()
            .sqrt();
        lhs.push(dist);
        let s_tilde = t.sampled_mm.denominator();
        let s_tilde_b = s_tilde.dot(&b);
        let s_tilde_form = b.dot(&s_tilde_b);
        term1.push(0.5 * (1.0 / s_tilde_form - 1.0 / sbar_form).abs() * rbar_b_norm);
        let mut vec2 = Array1::<f64>::zeros(d1);
        for i in 0..d1 {
            vec2[i] = (1.0 + t.eps) * s_tilde_b[i] / s_tilde_form - sbar_b[i] / sbar_form;
        }
        term2.push(0.5 * t.loss.abs() * vec2.dot(&vec2).sqrt());
        eps_all.push(t.eps);
    }

    Ok(GradientGap {
        n,
        d,
        trials,
        seed,
        lhs: mean_std(&lhs),
        term1: mean_std(&term1),
        term2: mean_std(&term2),
        eps: mean_std(&eps_all),
    })
}
