//! Choosing the models that enter the evaluation study from hold-out
//! validation data.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::test_statistics;
use crate::mbeta::{class_posterior, regularized_estimate};
use crate::rng::{derive_master, task_rng};
use crate::sampling::{
    latent_correlation, sample_group_sizes, sample_theta, BinarySampler, GroupSizeModel, MBetaSampler,
};
use crate::types::{ClassLabel, SimilarityMatrix, StudyConfig, Threshold};

/// Validation similarity matrices of all `M` candidate models.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationData {
    pub q_se: SimilarityMatrix,
    pub q_sp: SimilarityMatrix,
}

impl ValidationData {
    pub fn new(q_se: SimilarityMatrix, q_sp: SimilarityMatrix) -> Result<Self> {
        if q_se.n_models() != q_sp.n_models() {
            return Err(Error::DimensionMismatch {
                context: "validation models of both classes",
                expected: q_se.n_models(),
                found: q_sp.n_models(),
            });
        }
        Ok(ValidationData { q_se, q_sp })
    }

    pub fn n_models(&self) -> usize {
        self.q_se.n_models()
    }

    /// Regularized validation balanced accuracy and its standard error.
    fn balanced_accuracy(&self) -> (Vec<f64>, Vec<f64>) {
        let est = regularized_estimate(&self.q_se, &self.q_sp).expect("validated dimensions");
        (0..self.n_models())
            .map(|m| {
                let b = 0.5 * (est.se_mean[m] + est.sp_mean[m]);
                let se = (0.25 * est.se_cov[(m, m)] + 0.25 * est.sp_cov[(m, m)]).sqrt();
                (b, se)
            })
            .unzip()
    }
}

/// Models sorted by decreasing validation `min(T_se, T_sp)`, truncated to
/// `s_max`. Ties keep the original order.
pub fn prerank(val: &ValidationData, thr: &Threshold, s_max: usize) -> Vec<usize> {
    let est = regularized_estimate(&val.q_se, &val.q_sp).expect("validated dimensions");
    let stats = test_statistics(&est, thr).expect("regularized variances are positive");
    let mut order: Vec<usize> = (0..val.n_models()).collect();
    order.sort_by(|&a, &b| stats.t_min[b].total_cmp(&stats.t_min[a]));
    order.truncate(s_max);
    order
}

/// All models attaining the largest validation balanced accuracy.
pub fn select_default(val: &ValidationData) -> Vec<usize> {
    select_within_k_se(val, 0.0)
}

/// Models whose validation balanced accuracy is within `k` standard errors
/// of the best one (the first maximizer supplies the standard error).
pub fn select_within_k_se(val: &ValidationData, k: f64) -> Vec<usize> {
    let (bacc, se) = val.balanced_accuracy();
    let best = (0..bacc.len())
        .fold(0, |b, m| if bacc[m] > bacc[b] { m } else { b });
    let cut = bacc[best] - k * se[best];
    (0..bacc.len()).filter(|&m| bacc[m] >= cut).collect()
}

/// All maximizers of the true `min(Se, Sp + delta0)`.
pub fn select_oracle(true_se: &[f64], true_sp: &[f64], thr: &Threshold) -> Vec<usize> {
    let v: Vec<f64> = true_se
        .iter()
        .zip(true_sp)
        .map(|(&se, &sp)| se.min(sp + thr.delta0()))
        .collect();
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..v.len()).filter(|&m| v[m] == best).collect()
}

/// Utility `max_{m <= S} v_m - max_m v_m - c S` of evaluating the first `s`
/// models, where `v` holds `min(Se, Sp + delta0)` in ranked order.
pub fn subset_utility(s: usize, vartheta: &[f64], c: f64) -> Result<f64> {
    if s == 0 || s > vartheta.len() {
        return Err(Error::ParameterOutOfRange(format!(
            "subset size {s} outside 1..={}",
            vartheta.len()
        )));
    }
    let top = vartheta[..s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let all = vartheta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top - all - c * s as f64)
}

/// How the number of models is read off the estimated curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SStarRule {
    /// Smallest `S` within one Monte-Carlo standard error of the maximum.
    #[default]
    OneSe,
    Argmax,
}

impl FromStr for SStarRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_se" => Ok(SStarRule::OneSe),
            "argmax" => Ok(SStarRule::Argmax),
            _ => Err(Error::InvalidArgument(format!(
                "unknown s_star rule '{s}' (expected one_se or argmax)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfpOptions {
    pub s_max: usize,
    pub max_iter: usize,
    pub num_tol: f64,
    pub rule: SStarRule,
    /// Class-size model of the evaluation study; `None` uses a Beta prior on
    /// the prevalence built from the validation class sizes.
    pub group_sizes: Option<GroupSizeModel>,
}

pub const DEFAULT_MAX_ITER: usize = 250;
pub const DEFAULT_NUM_TOL: f64 = 0.001;

/// Default maximal subset size `round(sqrt(n_eval))`, at least 1.
pub fn default_s_max(n_eval: usize) -> usize {
    ((n_eval as f64).sqrt().round() as usize).max(1)
}

impl EfpOptions {
    pub fn new(n_eval: usize) -> Self {
        EfpOptions {
            s_max: default_s_max(n_eval),
            max_iter: DEFAULT_MAX_ITER,
            num_tol: DEFAULT_NUM_TOL,
            rule: SStarRule::OneSe,
            group_sizes: None,
        }
    }
}

/// Estimated expected final model performance per subset size.
#[derive(Debug, Clone, PartialEq)]
pub struct EfpCurve {
    /// Estimate for `S = 1, ..., S_max` (index `S - 1`).
    pub efp: Vec<f64>,
    /// Monte-Carlo standard errors.
    pub se: Vec<f64>,
    pub s_star: usize,
    /// Subset size with the largest estimate.
    pub s_argmax: usize,
    pub iterations_used: usize,
    /// Candidate models in ranked order; the selection is `ranking[..s_star]`.
    pub ranking: Vec<usize>,
    /// Correlations clipped or projected while generating the studies.
    pub projections: usize,
}

impl EfpCurve {
    pub fn selected(&self) -> &[usize] {
        &self.ranking[..self.s_star]
    }
}

/// Generative model of simulated evaluation studies for the ranked
/// candidates: true parameters from the validation posterior, class sizes,
/// then correlated binary evaluation data.
#[derive(Debug, Clone)]
pub struct EfpSimulator {
    ranking: Vec<usize>,
    se: MBetaSampler,
    sp: MBetaSampler,
    groups: GroupSizeModel,
    n_eval: usize,
    threshold: Threshold,
}

/// Result of one simulated evaluation study.
#[derive(Debug, Clone, PartialEq)]
pub struct EfpIteration {
    /// True `min(Se, Sp + delta0)` of the empirically best model among the
    /// first `S` models, for `S = 1, ..., S_max`.
    pub vartheta: Vec<f64>,
    pub projections: usize,
}

impl EfpSimulator {
    pub fn new(val: &ValidationData, cfg: &StudyConfig, opts: &EfpOptions) -> Result<Self> {
        if opts.s_max == 0 {
            return Err(Error::ParameterOutOfRange("s_max must be at least 1".into()));
        }
        if cfg.n_eval < 2 {
            return Err(Error::ParameterOutOfRange(format!(
                "evaluation sample size {} must be at least 2",
                cfg.n_eval
            )));
        }
        let ranking = prerank(val, &cfg.threshold, opts.s_max);
        let se_post = class_posterior(&val.q_se.select_columns(&ranking)?);
        let sp_post = class_posterior(&val.q_sp.select_columns(&ranking)?);
        let groups = opts.group_sizes.unwrap_or(GroupSizeModel::Beta {
            n1_learn: val.q_se.n_subjects() as u64,
            n0_learn: val.q_sp.n_subjects() as u64,
        });
        Ok(EfpSimulator {
            ranking,
            se: MBetaSampler::new(&se_post)?,
            sp: MBetaSampler::new(&sp_post)?,
            groups,
            n_eval: cfg.n_eval,
            threshold: cfg.threshold,
        })
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    /// One simulated evaluation study. The final model among the first `S`
    /// is the one with the largest `min(T_se, T_sp)` on the simulated data,
    /// ties broken at random.
    pub fn iteration<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EfpIteration> {
        let theta = sample_theta(&self.se, &self.sp, rng);
        let sizes = sample_group_sizes(self.n_eval, &self.groups, rng)?;
        let (q_se, p1) = draw_binary(theta.se.as_slice(), &theta.corr_se, sizes.n1, ClassLabel::Diseased, rng)?;
        let (q_sp, p0) = draw_binary(theta.sp.as_slice(), &theta.corr_sp, sizes.n0, ClassLabel::Healthy, rng)?;
        let t_se = marginal_t(&q_se, self.threshold.se0());
        let t_sp = marginal_t(&q_sp, self.threshold.sp0());
        let delta0 = self.threshold.delta0();
        let mut vartheta = Vec::with_capacity(self.ranking.len());
        let (mut best, mut best_t, mut ties) = (0, f64::NEG_INFINITY, 0u32);
        for m in 0..self.ranking.len() {
            let t = t_se[m].min(t_sp[m]);
            if t > best_t {
                (best, best_t, ties) = (m, t, 1);
            } else if t == best_t {
                // Reservoir step: uniform over all tied models seen so far.
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = m;
                }
            }
            vartheta.push(theta.se[best].min(theta.sp[best] + delta0));
        }
        Ok(EfpIteration {
            vartheta,
            projections: theta.projections + p1 + p0,
        })
    }
}

fn draw_binary<R: Rng + ?Sized>(
    means: &[f64],
    corr: &DMatrix<f64>,
    n: usize,
    class: ClassLabel,
    rng: &mut R,
) -> Result<(SimilarityMatrix, usize)> {
    let s = means.len();
    let mut latent = DMatrix::identity(s, s);
    for i in 0..s {
        for j in (i + 1)..s {
            let r = latent_correlation(means[i], means[j], corr[(i, j)])?;
            latent[(i, j)] = r;
            latent[(j, i)] = r;
        }
    }
    let (sampler, projected) = BinarySampler::from_latent(means, &latent, class)?;
    Ok((sampler.sample(n, rng), projected as usize))
}

/// Per-column statistic `(mean - theta0) / stderr` of the regularized
/// marginal estimate `(u + 1) / (n + 2)`.
fn marginal_t(q: &SimilarityMatrix, theta0: f64) -> Vec<f64> {
    let nu = q.n_subjects() as f64 + 2.0;
    q.column_sums()
        .into_iter()
        .map(|u| {
            let a = u as f64 + 1.0;
            let var = a * (nu - a) / (nu * nu * (nu + 1.0));
            (a / nu - theta0) / var.sqrt()
        })
        .collect()
}

/// Iterations computed together before the stopping rule is replayed.
const BATCH: usize = 16;

/// Running column means and variances of the result matrix.
struct ColumnStats {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ColumnStats {
    fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mu, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let d = x - *mu;
            *mu += d / n;
            *m2 += d * (x - *mu);
        }
    }

    /// Standard errors of the column means; zero before the second row.
    fn std_errors(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|&m2| if self.n < 2 { 0.0 } else { (m2 / (n - 1.0) / n).sqrt() })
            .collect()
    }
}

/// `(s_star, s_argmax)`, both 1-based.
fn choose_s(efp: &[f64], se: &[f64], rule: SStarRule) -> (usize, usize) {
    let arg = (0..efp.len()).fold(0, |b, s| if efp[s] > efp[b] { s } else { b });
    let star = match rule {
        SStarRule::Argmax => arg,
        SStarRule::OneSe => {
            let cut = efp[arg] - se[arg];
            (0..efp.len()).find(|&s| efp[s] >= cut).unwrap_or(arg)
        }
    };
    (star + 1, arg + 1)
}

/// Monte-Carlo optimization of the expected final model performance over the
/// number of (pre-ranked) models to evaluate.
///
/// Simulated studies are added until `max_iter` is reached or the standard
/// error of the estimate at the current choice drops to `num_tol`.
/// Iterations run in parallel batches, each on its own generator derived from
/// `rng`, and the stopping rule is applied in iteration order, so the result
/// does not depend on the number of threads.
pub fn optimal_efp<R: Rng + ?Sized>(
    val: &ValidationData,
    cfg: &StudyConfig,
    opts: &EfpOptions,
    rng: &mut R,
) -> Result<EfpCurve> {
    if opts.max_iter == 0 {
        return Err(Error::ParameterOutOfRange("max_iter must be at least 1".into()));
    }
    let sim = EfpSimulator::new(val, cfg, opts)?;
    let master = derive_master(rng);
    let s_max = sim.ranking.len();
    let mut stats = ColumnStats {
        n: 0,
        mean: vec![0.0; s_max],
        m2: vec![0.0; s_max],
    };
    let mut projections = 0;
    let mut done = false;
    while !done && stats.n < opts.max_iter {
        let start = stats.n;
        let end = (start + BATCH).min(opts.max_iter);
        let batch: Vec<Result<EfpIteration>> = (start..end)
            .into_par_iter()
            .map(|i| sim.iteration(&mut task_rng(master, i as u64)))
            .collect();
        for it in batch {
            let it = it?;
            stats.push(&it.vartheta);
            projections += it.projections;
            if stats.n >= 2 {
                let se = stats.std_errors();
                let (s_star, _) = choose_s(&stats.mean, &se, opts.rule);
                if se[s_star - 1] <= opts.num_tol {
                    done = true;
                    break;
                }
            }
        }
    }
    let se = stats.std_errors();
    let (s_star, s_argmax) = choose_s(&stats.mean, &se, opts.rule);
    Ok(EfpCurve {
        efp: stats.mean,
        se,
        s_star,
        s_argmax,
        iterations_used: stats.n,
        ranking: sim.ranking,
        projections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn matrix(cols: &[Vec<u8>], class: ClassLabel) -> SimilarityMatrix {
        let n = cols[0].len();
        let data = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        SimilarityMatrix::from_row_major(n, cols.len(), data, class).unwrap()
    }

    /// Column of length `n` with the first `k` entries correct.
    fn col(n: usize, k: usize) -> Vec<u8> {
        (0..n).map(|i| (i < k) as u8).collect()
    }

    fn validation(se: &[usize], sp: &[usize], n: usize) -> ValidationData {
        let q_se = matrix(&se.iter().map(|&k| col(n, k)).collect::<Vec<_>>(), ClassLabel::Diseased);
        let q_sp = matrix(&sp.iter().map(|&k| col(n, k)).collect::<Vec<_>>(), ClassLabel::Healthy);
        ValidationData::new(q_se, q_sp).unwrap()
    }

    #[test]
    fn prerank_orders_by_min_statistic() {
        let thr = Threshold::symmetric(0.7).unwrap();
        let val = validation(&[75, 95, 85], &[90, 90, 90], 100);
        assert_eq!(prerank(&val, &thr, 2), vec![1, 2]);
        assert_eq!(prerank(&val, &thr, 10), vec![1, 2, 0]);
        let same = validation(&[80, 80, 80], &[80, 80, 80], 100);
        assert_eq!(prerank(&same, &thr, 3), vec![0, 1, 2]);
    }

    #[test]
    fn default_and_within_k_se() {
        let val = validation(&[70, 90, 80], &[70, 90, 80], 100);
        assert_eq!(select_default(&val), vec![1]);
        let tied = validation(&[90, 90], &[90, 90], 100);
        assert_eq!(select_default(&tied), vec![0, 1]);
        let one = validation(&[50], &[50], 10);
        assert_eq!(select_default(&one), vec![0]);

        let val = validation(&[90, 89, 70], &[90, 89, 70], 100);
        assert_eq!(select_within_k_se(&val, 0.0), select_default(&val));
        assert_eq!(select_within_k_se(&val, 1.0), vec![0, 1]);
        assert_eq!(select_within_k_se(&val, 1e6), vec![0, 1, 2]);
    }

    #[test]
    fn oracle_examples() {
        let thr = Threshold::symmetric(0.5).unwrap();
        assert_eq!(select_oracle(&[0.8, 0.9], &[0.9, 0.7], &thr), vec![0]);
        assert_eq!(select_oracle(&[0.8, 0.8], &[0.9, 0.9], &thr), vec![0, 1]);
        assert_eq!(select_oracle(&[0.1], &[0.2], &thr), vec![0]);
    }

    #[test]
    fn utility() {
        let v = [0.80, 0.85, 0.82];
        assert!((subset_utility(1, &v, 0.01).unwrap() - (-0.05 - 0.01)).abs() < 1e-12);
        assert!((subset_utility(2, &v, 0.01).unwrap() + 0.02).abs() < 1e-12);
        assert!(subset_utility(0, &v, 0.0).is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("one_se".parse::<SStarRule>().unwrap(), SStarRule::OneSe);
        assert_eq!("argmax".parse::<SStarRule>().unwrap(), SStarRule::Argmax);
        assert!("best".parse::<SStarRule>().is_err());
    }

    #[test]
    fn s_star_choice() {
        let efp = [0.80, 0.83, 0.84, 0.835];
        let se = [0.01, 0.01, 0.02, 0.01];
        assert_eq!(choose_s(&efp, &se, SStarRule::Argmax), (3, 3));
        assert_eq!(choose_s(&efp, &se, SStarRule::OneSe), (2, 3));
    }

    #[test]
    fn single_model_curve() {
        let val = validation(&[80, 70], &[85, 90], 100);
        let cfg = StudyConfig::new(Threshold::symmetric(0.7).unwrap()).with_n_eval(200);
        let mut opts = EfpOptions::new(200);
        opts.s_max = 1;
        opts.max_iter = 20;
        let curve = optimal_efp(&val, &cfg, &opts, &mut seeded(1)).unwrap();
        assert_eq!(curve.efp.len(), 1);
        assert_eq!(curve.s_star, 1);
        assert!(curve.efp[0] > 0.0 && curve.efp[0] < 1.0);
    }

    #[test]
    fn curve_is_reproducible_and_bounded() {
        let val = validation(&[80, 78, 82, 75, 79], &[80, 83, 77, 81, 79], 100);
        let cfg = StudyConfig::new(Threshold::symmetric(0.7).unwrap()).with_n_eval(400);
        let mut opts = EfpOptions::new(400);
        opts.max_iter = 40;
        let a = optimal_efp(&val, &cfg, &opts, &mut seeded(4)).unwrap();
        let b = optimal_efp(&val, &cfg, &opts, &mut seeded(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.efp.len(), 5);
        assert!(a.s_star >= 1 && a.s_star <= 5);
        assert_eq!(a.iterations_used, 40);
        assert!(a.efp.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn stops_at_tolerance() {
        let val = validation(&[80, 78], &[80, 83], 100);
        let cfg = StudyConfig::new(Threshold::symmetric(0.7).unwrap()).with_n_eval(400);
        let mut opts = EfpOptions::new(400);
        opts.num_tol = 0.05;
        let curve = optimal_efp(&val, &cfg, &opts, &mut seeded(4)).unwrap();
        assert!(curve.iterations_used < 20, "{}", curve.iterations_used);
        assert!(curve.se[curve.s_star - 1] <= 0.05);
    }
}
