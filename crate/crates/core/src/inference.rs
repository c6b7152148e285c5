//! The maxT test for co-primary endpoints: a model is positively evaluated
//! when both its sensitivity and its specificity statistic exceed a common
//! critical value taken from the multivariate normal approximation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mvnorm::{equicoordinate_quantile, CorrelationMatrix};
use crate::types::{ClassLabel, CoPrimaryEstimate, StudyConfig, Threshold};

#[derive(Debug, Clone, PartialEq)]
pub struct TestStatistics {
    pub t_se: DVector<f64>,
    pub t_sp: DVector<f64>,
    /// Elementwise minimum of `t_se` and `t_sp`.
    pub t_min: DVector<f64>,
    /// True where the sensitivity margin is the smaller one (ties count as
    /// sensitivity).
    pub b_hat: Vec<bool>,
}

impl TestStatistics {
    pub fn n_models(&self) -> usize {
        self.t_min.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub statistics: TestStatistics,
    pub critical_value: f64,
    pub rejected: Vec<bool>,
    pub se_hat: DVector<f64>,
    pub sp_hat: DVector<f64>,
    pub ci_lower_se: DVector<f64>,
    pub ci_lower_sp: DVector<f64>,
    /// Critical value at level 0.5 used for the corrected estimates.
    pub median_critical_value: f64,
    pub corrected_se: DVector<f64>,
    pub corrected_sp: DVector<f64>,
    pub r_hat: CorrelationMatrix,
}

impl TestOutcome {
    pub fn n_models(&self) -> usize {
        self.rejected.len()
    }

    pub fn any_rejected(&self) -> bool {
        self.rejected.iter().any(|&r| r)
    }
}

/// Standardized distances to the thresholds, `(mean - theta0) / stderr`.
pub fn test_statistics(est: &CoPrimaryEstimate, thr: &Threshold) -> Result<TestStatistics> {
    let s = est.n_models();
    let se_sd = est.se_stderr();
    let sp_sd = est.sp_stderr();
    for m in 0..s {
        for (sd, class) in [(se_sd[m], ClassLabel::Diseased), (sp_sd[m], ClassLabel::Healthy)] {
            if !(sd > 0.0) {
                return Err(Error::ZeroStandardError { model: m, class });
            }
        }
    }
    let d_se = est.se_mean.map(|v| v - thr.se0());
    let d_sp = est.sp_mean.map(|v| v - thr.sp0());
    let t_se = d_se.component_div(&se_sd);
    let t_sp = d_sp.component_div(&sp_sd);
    let t_min = t_se.zip_map(&t_sp, f64::min);
    let b_hat = (0..s).map(|m| d_se[m] <= d_sp[m]).collect();
    Ok(TestStatistics {
        t_se,
        t_sp,
        t_min,
        b_hat,
    })
}

/// Correlation of the statistics that are binding under the estimated least
/// favorable configuration: models with `b_hat` set take their correlations
/// from the sensitivity estimates, the others from the specificity estimates,
/// and the two groups are uncorrelated.
pub fn lfc_correlation(est: &CoPrimaryEstimate, stats: &TestStatistics) -> Result<CorrelationMatrix> {
    let s = est.n_models();
    if stats.n_models() != s {
        return Err(Error::DimensionMismatch {
            context: "statistics vs estimate",
            expected: s,
            found: stats.n_models(),
        });
    }
    let corr = |cov: &DMatrix<f64>, i: usize, j: usize| {
        (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).clamp(-1.0, 1.0)
    };
    let b = &stats.b_hat;
    let m = DMatrix::from_fn(s, s, |i, j| {
        if i == j {
            1.0
        } else if b[i] && b[j] {
            corr(&est.se_cov, i, j)
        } else if !b[i] && !b[j] {
            corr(&est.sp_cov, i, j)
        } else {
            0.0
        }
    });
    CorrelationMatrix::new(m)
}

/// Equicoordinate `(1 - alpha)`-quantile of `N(0, r)`.
pub fn critical_value(r: &CorrelationMatrix, alpha: f64, tol: f64, seed: u64) -> Result<f64> {
    Ok(equicoordinate_quantile(r, 1.0 - alpha, tol, seed)?.c)
}

/// Runs the maxT test on all models of `est`.
///
/// Confidence bounds are one-sided, `mean - c * stderr`, clipped to [0, 1].
/// The corrected estimates are the same bounds at level 0.5.
pub fn max_t_test(est: &CoPrimaryEstimate, cfg: &StudyConfig) -> Result<TestOutcome> {
    cfg.validate()?;
    let statistics = test_statistics(est, &cfg.threshold)?;
    let r_hat = lfc_correlation(est, &statistics)?;
    let c = critical_value(&r_hat, cfg.alpha, cfg.mc_tolerance, cfg.seed)?;
    // The median of a maximum of centred normals is nonnegative; clip the
    // integration noise.
    let c_half = critical_value(&r_hat, 0.5, cfg.mc_tolerance, cfg.seed)?.max(0.0);
    let se_sd = est.se_stderr();
    let sp_sd = est.sp_stderr();
    let bound = |mean: &DVector<f64>, sd: &DVector<f64>, c: f64| {
        mean.zip_map(sd, |m, s| (m - c * s).clamp(0.0, 1.0))
    };
    let rejected = statistics.t_min.iter().map(|&t| t > c).collect();
    Ok(TestOutcome {
        rejected,
        critical_value: c,
        se_hat: est.se_mean.clone(),
        sp_hat: est.sp_mean.clone(),
        ci_lower_se: bound(&est.se_mean, &se_sd, c),
        ci_lower_sp: bound(&est.sp_mean, &sp_sd, c),
        median_critical_value: c_half,
        corrected_se: bound(&est.se_mean, &se_sd, c_half),
        corrected_sp: bound(&est.sp_mean, &sp_sd, c_half),
        statistics,
        r_hat,
    })
}

/// Embeds the decisions on the evaluated models (`selected`, 0-based) into a
/// vector over all `total` candidates; unevaluated models are not rejected.
pub fn extend_decision(outcome: &TestOutcome, selected: &[usize], total: usize) -> Result<Vec<bool>> {
    if selected.len() != outcome.n_models() {
        return Err(Error::DimensionMismatch {
            context: "selected models vs test outcome",
            expected: outcome.n_models(),
            found: selected.len(),
        });
    }
    let mut out = vec![false; total];
    for (&m, &r) in selected.iter().zip(&outcome.rejected) {
        if m >= total {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: total,
            });
        }
        out[m] = r;
    }
    Ok(out)
}

/// How the final model is picked among the evaluated ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalRule {
    /// Largest `t_min`, whether or not anything was rejected.
    MaxT,
    /// Largest `w * Se + (1 - w) * Sp` among the rejected models.
    MaxWeighted(f64),
}

/// Index (within the evaluated models) of the final model. Ties are broken
/// uniformly at random.
pub fn final_model<R: Rng + ?Sized>(outcome: &TestOutcome, rule: FinalRule, rng: &mut R) -> Option<usize> {
    let candidates: Vec<(usize, f64)> = match rule {
        FinalRule::MaxT => outcome.statistics.t_min.iter().copied().enumerate().collect(),
        FinalRule::MaxWeighted(w) => (0..outcome.n_models())
            .filter(|&m| outcome.rejected[m])
            .map(|m| (m, w * outcome.se_hat[m] + (1.0 - w) * outcome.sp_hat[m]))
            .collect(),
    };
    argmax_random_tie(&candidates, rng)
}

pub(crate) fn argmax_random_tie<R: Rng + ?Sized>(items: &[(usize, f64)], rng: &mut R) -> Option<usize> {
    let best = items.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = items.iter().filter(|&&(_, v)| v == best).map(|&(i, _)| i).collect();
    match ties.len() {
        0 => None,
        1 => Some(ties[0]),
        k => Some(ties[rng.random_range(0..k)]),
    }
}
