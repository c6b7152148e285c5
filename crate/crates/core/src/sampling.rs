//! Random generation of correlated binary similarity matrices, of true
//! performance parameters from a multivariate Beta posterior, and of class
//! sizes.
//!
//! Binary columns are produced by thresholding a latent multivariate normal
//! vector. The latent correlation of each pair is solved so that the
//! dichotomized pair has the requested correlation exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, StandardNormal};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::error::{Error, Result};
use crate::mbeta::{posterior_moments, MBetaParams};
use crate::mvnorm::{bvn_upper, norm_cdf, norm_quantile, CorrelationMatrix};
use crate::types::{ClassLabel, SimilarityMatrix};

/// Slack allowed when checking a requested correlation against its bounds.
const FEASIBILITY_TOL: f64 = 1e-12;

/// Range of correlations two Bernoulli variables with means `p1`, `p2` can
/// attain. Both means must lie strictly inside (0, 1).
pub fn frechet_bounds(p1: f64, p2: f64) -> (f64, f64) {
    let sd = (p1 * (1.0 - p1) * p2 * (1.0 - p2)).sqrt();
    let lo = ((p1 + p2 - 1.0).max(0.0) - p1 * p2) / sd;
    let hi = (p1.min(p2) - p1 * p2) / sd;
    (lo.max(-1.0), hi.min(1.0))
}

pub fn is_feasible(p1: f64, p2: f64, corr: f64) -> bool {
    let (lo, hi) = frechet_bounds(p1, p2);
    corr >= lo - FEASIBILITY_TOL && corr <= hi + FEASIBILITY_TOL
}

fn bvn_density(h: f64, k: f64, r: f64) -> f64 {
    let s = 1.0 - r * r;
    (-(h * h - 2.0 * r * h * k + k * k) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
}

/// Latent normal correlation under which `1(Z_1 > Phi^-1(1 - p1))` and
/// `1(Z_2 > Phi^-1(1 - p2))` have correlation `corr`.
pub fn latent_correlation(p1: f64, p2: f64, corr: f64) -> Result<f64> {
    let (lo, hi) = frechet_bounds(p1, p2);
    if !is_feasible(p1, p2, corr) {
        return Err(Error::InfeasibleCorrelation {
            mean1: p1,
            mean2: p2,
            corr,
            lower: lo,
            upper: hi,
        });
    }
    let corr = corr.clamp(lo, hi);
    let sd = (p1 * (1.0 - p1) * p2 * (1.0 - p2)).sqrt();
    let target = p1 * p2 + corr * sd;
    let (h, k) = (norm_quantile(1.0 - p1), norm_quantile(1.0 - p2));
    let f = |r: f64| bvn_upper(h, k, r) - target;
    let (mut a, mut b) = (-1.0, 1.0);
    if f(b) <= FEASIBILITY_TOL * sd {
        return Ok(1.0);
    }
    if f(a) >= -FEASIBILITY_TOL * sd {
        return Ok(-1.0);
    }
    // Newton on the increasing function f, falling back to bisection whenever
    // a step leaves the bracket.
    let mut r = corr;
    for _ in 0..100 {
        let fr = f(r);
        if fr.abs() <= 1e-15 {
            return Ok(r);
        }
        if fr > 0.0 {
            b = r;
        } else {
            a = r;
        }
        let step = fr / bvn_density(h, k, r);
        let next = r - step;
        let next = if next > a && next < b && step.is_finite() {
            next
        } else {
            0.5 * (a + b)
        };
        if (next - r).abs() <= 1e-14 || b - a <= 1e-14 {
            return Ok(next);
        }
        r = next;
    }
    Ok(r)
}

/// Target of [`sample_correlated_binary`]: column means in (0, 1], pairwise
/// correlations between non-constant columns, row count and class.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTargetSpec {
    means: Vec<f64>,
    corr: DMatrix<f64>,
    n: usize,
    class: ClassLabel,
}

impl BinaryTargetSpec {
    /// Columns with mean 1 are constant; their entries in `corr` are ignored.
    pub fn new(means: Vec<f64>, corr: DMatrix<f64>, n: usize, class: ClassLabel) -> Result<Self> {
        let s = means.len();
        if s == 0 {
            return Err(Error::EmptyModelSet);
        }
        if corr.nrows() != s || corr.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "target correlation matrix",
                expected: s,
                found: corr.nrows(),
            });
        }
        if let Some(p) = means.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::ParameterOutOfRange(format!(
                "target mean {p} outside (0, 1]"
            )));
        }
        for i in 0..s {
            for j in (i + 1)..s {
                if means[i] == 1.0 || means[j] == 1.0 {
                    continue;
                }
                let c = corr[(i, j)];
                if (c - corr[(j, i)]).abs() > 1e-12 {
                    return Err(Error::ParameterOutOfRange(format!(
                        "target correlation not symmetric at ({i}, {j})"
                    )));
                }
                if !is_feasible(means[i], means[j], c) {
                    let (lower, upper) = frechet_bounds(means[i], means[j]);
                    return Err(Error::InfeasibleCorrelation {
                        mean1: means[i],
                        mean2: means[j],
                        corr: c,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(BinaryTargetSpec {
            means,
            corr,
            n,
            class,
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn class(&self) -> ClassLabel {
        self.class
    }

    /// Latent normal correlations for all pairs of non-constant columns;
    /// other entries are 0 (1 on the diagonal).
    pub fn latent_matrix(&self) -> Result<DMatrix<f64>> {
        let s = self.means.len();
        let mut m = DMatrix::identity(s, s);
        for i in 0..s {
            for j in (i + 1)..s {
                let (pi, pj) = (self.means[i], self.means[j]);
                if pi == 1.0 || pj == 1.0 {
                    continue;
                }
                let r = latent_correlation(pi, pj, self.corr[(i, j)])?;
                m[(i, j)] = r;
                m[(j, i)] = r;
            }
        }
        Ok(m)
    }
}

/// Reusable generator for one binary target.
#[derive(Debug, Clone)]
pub struct BinarySampler {
    n_models: usize,
    /// Non-constant columns.
    active: Vec<usize>,
    thresholds: Vec<f64>,
    /// Lower-triangular factor of the latent correlation of the active columns.
    chol: Vec<f64>,
    class: ClassLabel,
}

impl BinarySampler {
    /// Solves the latent correlations of `spec`. Fails if the latent matrix is
    /// clearly indefinite.
    pub fn new(spec: &BinaryTargetSpec) -> Result<Self> {
        let latent = spec.latent_matrix()?;
        Self::build(&spec.means, &latent, spec.class, false).map(|(s, _)| s)
    }

    /// Like [`BinarySampler::new`] but with a precomputed latent matrix over
    /// all columns (entries of constant columns are ignored). An indefinite
    /// latent matrix is projected onto the correlation matrices; the flag
    /// reports whether that happened.
    pub fn from_latent(means: &[f64], latent: &DMatrix<f64>, class: ClassLabel) -> Result<(Self, bool)> {
        Self::build(means, latent, class, true)
    }

    fn build(means: &[f64], latent: &DMatrix<f64>, class: ClassLabel, project: bool) -> Result<(Self, bool)> {
        if means.is_empty() {
            return Err(Error::EmptyModelSet);
        }
        if latent.nrows() != means.len() || latent.ncols() != means.len() {
            return Err(Error::DimensionMismatch {
                context: "latent correlation matrix",
                expected: means.len(),
                found: latent.nrows(),
            });
        }
        let active: Vec<usize> = (0..means.len()).filter(|&m| means[m] < 1.0).collect();
        let k = active.len();
        let sub = DMatrix::from_fn(k, k, |i, j| latent[(active[i], active[j])]);
        let (r, projected) = if k == 0 {
            (CorrelationMatrix::identity(1), false)
        } else if project {
            CorrelationMatrix::project(sub)?
        } else {
            (CorrelationMatrix::new(sub)?, false)
        };
        let l = if k == 0 { DMatrix::zeros(0, 0) } else { r.cholesky_factor() };
        let chol = (0..k * k).map(|idx| l[(idx / k, idx % k)]).collect();
        let thresholds = active.iter().map(|&m| norm_quantile(1.0 - means[m])).collect();
        Ok((
            BinarySampler {
                n_models: means.len(),
                active,
                thresholds,
                chol,
                class,
            },
            projected,
        ))
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    /// Draws `n` independent rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SimilarityMatrix {
        let s = self.n_models;
        let k = self.active.len();
        let mut data = vec![1u8; n * s];
        let mut g = vec![0.0; k];
        for row in data.chunks_exact_mut(s) {
            for v in g.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for (i, &m) in self.active.iter().enumerate() {
                let li = &self.chol[i * k..i * k + i + 1];
                let z: f64 = li.iter().zip(&g).map(|(a, b)| a * b).sum();
                row[m] = (z > self.thresholds[i]) as u8;
            }
        }
        SimilarityMatrix::from_raw(n, s, data, self.class)
    }
}

/// `spec.n` independent rows with the requested marginal means and pairwise
/// correlations.
pub fn sample_correlated_binary<R: Rng + ?Sized>(spec: &BinaryTargetSpec, rng: &mut R) -> Result<SimilarityMatrix> {
    Ok(BinarySampler::new(spec)?.sample(spec.n, rng))
}

/// One draw of the true parameters of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDraw {
    /// Per-model success probabilities.
    pub theta: DVector<f64>,
    /// Correlation of the per-subject correctness indicators.
    pub corr: DMatrix<f64>,
    /// Number of correlations clipped to the feasible range of this draw.
    pub projections: usize,
}

/// True parameters of both classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaDraw {
    pub se: DVector<f64>,
    pub sp: DVector<f64>,
    pub corr_se: DMatrix<f64>,
    pub corr_sp: DMatrix<f64>,
    pub projections: usize,
}

/// Draws from a multivariate Beta distribution through a Gaussian copula.
///
/// Marginals are `Beta(A_mm, nu - A_mm)`; the copula correlation is the
/// correlation of the distribution's covariance matrix. Only first and
/// second moments of the distribution are defined, so this is one
/// consistent completion and the joint second moments are approximate.
///
/// The indicator correlation of a draw is the phi coefficient of the
/// expected 2x2 tables `A / nu`, clipped to the bounds attainable at the
/// drawn means.
#[derive(Debug, Clone)]
pub struct MBetaSampler {
    marginals: Vec<BetaDist>,
    chol: DMatrix<f64>,
    indicator_corr: DMatrix<f64>,
    /// True if the copula correlation had to be projected.
    pub copula_projected: bool,
}

impl MBetaSampler {
    pub fn new(params: &MBetaParams) -> Result<Self> {
        let s = params.dim();
        let nu = params.nu();
        let a = params.moment_matrix();
        let marginals = (0..s)
            .map(|m| {
                BetaDist::new(a[(m, m)], nu - a[(m, m)])
                    .map_err(|e| Error::ParameterOutOfRange(format!("Beta marginal {m}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, cov) = posterior_moments(params);
        let copula = DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                1.0
            } else {
                (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).clamp(-1.0, 1.0)
            }
        });
        let (r, copula_projected) = CorrelationMatrix::project(copula)?;
        let mu: Vec<f64> = (0..s).map(|m| a[(m, m)] / nu).collect();
        let indicator_corr = DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                1.0
            } else {
                let sd = (mu[i] * (1.0 - mu[i]) * mu[j] * (1.0 - mu[j])).sqrt();
                ((a[(i, j)] / nu - mu[i] * mu[j]) / sd).clamp(-1.0, 1.0)
            }
        });
        Ok(MBetaSampler {
            marginals,
            chol: r.cholesky_factor(),
            indicator_corr,
            copula_projected,
        })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ClassDraw {
        let s = self.dim();
        let g: DVector<f64> = DVector::from_fn(s, |_, _| rng.sample(StandardNormal));
        let z = &self.chol * g;
        let theta = DVector::from_fn(s, |m, _| {
            self.marginals[m]
                .inverse_cdf(norm_cdf(z[m]))
                .clamp(f64::EPSILON, 1.0 - f64::EPSILON)
        });
        let mut projections = 0;
        let mut corr = self.indicator_corr.clone();
        for i in 0..s {
            for j in (i + 1)..s {
                let (lo, hi) = frechet_bounds(theta[i], theta[j]);
                let c = corr[(i, j)];
                if c < lo || c > hi {
                    projections += 1;
                    let c = c.clamp(lo, hi);
                    corr[(i, j)] = c;
                    corr[(j, i)] = c;
                }
            }
        }
        ClassDraw {
            theta,
            corr,
            projections,
        }
    }
}

/// A single draw from `params`; see [`MBetaSampler`].
pub fn sample_mbeta<R: Rng + ?Sized>(params: &MBetaParams, rng: &mut R) -> Result<ClassDraw> {
    Ok(MBetaSampler::new(params)?.draw(rng))
}

/// Draws the parameters of both classes.
pub fn sample_theta<R: Rng + ?Sized>(se: &MBetaSampler, sp: &MBetaSampler, rng: &mut R) -> ThetaDraw {
    let a = se.draw(rng);
    let b = sp.draw(rng);
    ThetaDraw {
        se: a.theta,
        sp: b.theta,
        corr_se: a.corr,
        corr_sp: b.corr,
        projections: a.projections + b.projections,
    }
}

/// Maximum number of draws before giving up on non-degenerate class sizes.
pub const MAX_GROUP_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupSizeModel {
    /// `n1 = round(prevalence * n)`.
    Fixed { prevalence: f64 },
    /// Prevalence from `Beta(1 + n1_learn, 1 + n0_learn)`, then `n1 ~ Bin(n, prevalence)`.
    Beta { n1_learn: u64, n0_learn: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSizes {
    pub n1: usize,
    pub n0: usize,
    pub prevalence: f64,
}

/// Splits `n` subjects into diseased and healthy. Draws leaving a class empty
/// are repeated up to [`MAX_GROUP_DRAWS`] times.
pub fn sample_group_sizes<R: Rng + ?Sized>(n: usize, model: &GroupSizeModel, rng: &mut R) -> Result<GroupSizes> {
    if n < 2 {
        return Err(Error::DegenerateGroupSizes { n, attempts: 0 });
    }
    match *model {
        GroupSizeModel::Fixed { prevalence } => {
            if !(prevalence > 0.0 && prevalence < 1.0) {
                return Err(Error::ParameterOutOfRange(format!(
                    "prevalence {prevalence} outside (0, 1)"
                )));
            }
            let n1 = (prevalence * n as f64).round() as usize;
            if n1 == 0 || n1 == n {
                return Err(Error::DegenerateGroupSizes { n, attempts: 1 });
            }
            Ok(GroupSizes {
                n1,
                n0: n - n1,
                prevalence,
            })
        }
        GroupSizeModel::Beta { n1_learn, n0_learn } => {
            let beta = Beta::new(1.0 + n1_learn as f64, 1.0 + n0_learn as f64)
                .map_err(|e| Error::ParameterOutOfRange(e.to_string()))?;
            for _ in 0..MAX_GROUP_DRAWS {
                let prevalence: f64 = beta.sample(rng);
                let n1 = Binomial::new(n as u64, prevalence)
                    .map_err(|e| Error::ParameterOutOfRange(e.to_string()))?
                    .sample(rng) as usize;
                if n1 > 0 && n1 < n {
                    return Ok(GroupSizes {
                        n1,
                        n0: n - n1,
                        prevalence,
                    });
                }
            }
            Err(Error::DegenerateGroupSizes {
                n,
                attempts: MAX_GROUP_DRAWS,
            })
        }
    }
}
