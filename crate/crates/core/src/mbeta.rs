//! Multivariate Beta-binomial model in reduced form: a prior sample size `nu`
//! and a moment matrix `A`, whose diagonal holds the pseudo-successes of each
//! model and whose off-diagonal entries hold joint pseudo-successes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{CoPrimaryEstimate, SimilarityMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MBetaParams {
    nu: f64,
    a: DMatrix<f64>,
}

impl MBetaParams {
    /// Validates `0 < A_ij <= min(A_ii, A_jj)` and `0 < A_ii < nu`.
    pub fn new(nu: f64, a: DMatrix<f64>) -> Result<Self> {
        let s = a.nrows();
        if s == 0 {
            return Err(Error::EmptyModelSet);
        }
        if a.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "moment matrix columns",
                expected: s,
                found: a.ncols(),
            });
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!(
                "sample size nu = {nu} must be positive"
            )));
        }
        for i in 0..s {
            let d = a[(i, i)];
            if !(d > 0.0 && d < nu) {
                return Err(Error::ParameterOutOfRange(format!(
                    "moment matrix diagonal A[{i},{i}] = {d} outside (0, {nu})"
                )));
            }
            for j in (i + 1)..s {
                let v = a[(i, j)];
                if v != a[(j, i)] {
                    return Err(Error::ParameterOutOfRange(format!(
                        "moment matrix not symmetric at ({i}, {j})"
                    )));
                }
                if !(v > 0.0 && v <= d.min(a[(j, j)])) {
                    return Err(Error::ParameterOutOfRange(format!(
                        "moment matrix entry A[{i},{j}] = {v} outside (0, min(A_ii, A_jj)]"
                    )));
                }
            }
        }
        Ok(MBetaParams { nu, a })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn moment_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Restricts the distribution to the given models, in the given order.
    pub fn select(&self, models: &[usize]) -> Result<Self> {
        let s = self.dim();
        if models.is_empty() {
            return Err(Error::EmptyModelSet);
        }
        if let Some(&bad) = models.iter().find(|&&m| m >= s) {
            return Err(Error::IndexOutOfRange { index: bad, len: s });
        }
        let k = models.len();
        Ok(MBetaParams {
            nu: self.nu,
            a: DMatrix::from_fn(k, k, |i, j| self.a[(models[i], models[j])]),
        })
    }
}

/// Sufficient statistics of one similarity matrix: the row count and the
/// joint success counts `U = Q^T Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentUpdate {
    n: u64,
    u: DMatrix<u64>,
}

impl MomentUpdate {
    pub fn new(n: u64, u: DMatrix<u64>) -> Result<Self> {
        let s = u.nrows();
        if s == 0 {
            return Err(Error::EmptyModelSet);
        }
        if u.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "update matrix columns",
                expected: s,
                found: u.ncols(),
            });
        }
        for i in 0..s {
            if u[(i, i)] > n {
                return Err(Error::ParameterOutOfRange(format!(
                    "count U[{i},{i}] = {} exceeds n = {n}",
                    u[(i, i)]
                )));
            }
            for j in (i + 1)..s {
                if u[(i, j)] != u[(j, i)] || u[(i, j)] > u[(i, i)].min(u[(j, j)]) {
                    return Err(Error::ParameterOutOfRange(format!(
                        "inconsistent joint count at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(MomentUpdate { n, u })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.u
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// Statistics of the row-wise concatenation of two data sets.
    pub fn combine(&self, other: &MomentUpdate) -> Result<Self> {
        check_dim("update dimension", self.dim(), other.dim())?;
        Ok(MomentUpdate {
            n: self.n + other.n,
            u: &self.u + &other.u,
        })
    }
}

/// Vague prior made of independent uniform marginals: `nu = 2`, unit
/// diagonal, off-diagonal 1/2.
pub fn uniform_prior(s: usize) -> MBetaParams {
    MBetaParams {
        nu: 2.0,
        a: DMatrix::from_fn(s, s, |i, j| if i == j { 1.0 } else { 0.5 }),
    }
}

/// Row count and joint success counts of `q`.
pub fn moment_matrix(q: &SimilarityMatrix) -> MomentUpdate {
    let s = q.n_models();
    let n = q.n_subjects();
    // Pack every column into a bitset over subjects and count joint ones with
    // popcounts.
    let words = n.div_ceil(64);
    let mut bits = vec![0u64; s * words];
    for (i, row) in q.rows().enumerate() {
        let (w, b) = (i / 64, i % 64);
        for (m, &v) in row.iter().enumerate() {
            bits[m * words + w] |= (v as u64) << b;
        }
    }
    let mut u = DMatrix::zeros(s, s);
    for i in 0..s {
        let ci = &bits[i * words..(i + 1) * words];
        for j in i..s {
            let cj = &bits[j * words..(j + 1) * words];
            let c: u64 = ci.iter().zip(cj).map(|(x, y)| (x & y).count_ones() as u64).sum();
            u[(i, j)] = c;
            u[(j, i)] = c;
        }
    }
    MomentUpdate { n: n as u64, u }
}

/// Conjugate update `nu* = nu + n`, `A* = A + U`.
pub fn posterior_update(prior: &MBetaParams, data: &MomentUpdate) -> Result<MBetaParams> {
    check_dim("posterior update", prior.dim(), data.dim())?;
    Ok(MBetaParams {
        nu: prior.nu + data.n as f64,
        a: &prior.a + data.u.map(|v| v as f64),
    })
}

/// Mean `diag(A) / nu` and covariance `(nu A - a a^T) / (nu^2 (nu + 1))` with
/// `a = diag(A)`.
pub fn posterior_moments(params: &MBetaParams) -> (DVector<f64>, DMatrix<f64>) {
    let nu = params.nu;
    let alpha = params.a.diagonal();
    let mean = &alpha / nu;
    let denom = nu * nu * (nu + 1.0);
    let cov = DMatrix::from_fn(params.dim(), params.dim(), |i, j| {
        (nu * params.a[(i, j)] - alpha[i] * alpha[j]) / denom
    });
    (mean, cov)
}

/// Posterior of one class under the uniform prior.
pub fn class_posterior(q: &SimilarityMatrix) -> MBetaParams {
    let prior = uniform_prior(q.n_models());
    posterior_update(&prior, &moment_matrix(q)).expect("prior built with matching dimension")
}

/// Posterior means and covariances under the uniform prior, separately for
/// both classes. Variances stay positive even for all-correct columns.
pub fn regularized_estimate(
    q_se: &SimilarityMatrix,
    q_sp: &SimilarityMatrix,
) -> Result<CoPrimaryEstimate> {
    check_dim("models of both classes", q_se.n_models(), q_sp.n_models())?;
    let (se_mean, se_cov) = posterior_moments(&class_posterior(q_se));
    let (sp_mean, sp_cov) = posterior_moments(&class_posterior(q_sp));
    Ok(CoPrimaryEstimate {
        se_mean,
        sp_mean,
        se_cov,
        sp_cov,
        n1: q_se.n_subjects(),
        n0: q_sp.n_subjects(),
    })
}

/// Sample proportions `u / n` with plug-in covariance `(n U - u u^T) / n^3`.
pub fn naive_estimate(
    q_se: &SimilarityMatrix,
    q_sp: &SimilarityMatrix,
) -> Result<CoPrimaryEstimate> {
    check_dim("models of both classes", q_se.n_models(), q_sp.n_models())?;
    let (se_mean, se_cov) = naive_moments(q_se)?;
    let (sp_mean, sp_cov) = naive_moments(q_sp)?;
    Ok(CoPrimaryEstimate {
        se_mean,
        sp_mean,
        se_cov,
        sp_cov,
        n1: q_se.n_subjects(),
        n0: q_sp.n_subjects(),
    })
}

fn naive_moments(q: &SimilarityMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if q.n_subjects() == 0 {
        return Err(Error::EmptyClass(q.class()));
    }
    let upd = moment_matrix(q);
    let n = upd.n as f64;
    let u = upd.u.map(|v| v as f64);
    let diag = u.diagonal();
    let mean = &diag / n;
    let cov = DMatrix::from_fn(q.n_models(), q.n_models(), |i, j| {
        (n * u[(i, j)] - diag[i] * diag[j]) / (n * n * n)
    });
    Ok((mean, cov))
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
