//! Monte-Carlo experiments: family-wise error rates near the least favorable
//! configuration, and complete selection/evaluation pipelines on a known
//! truth.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{critical_value, final_model, lfc_correlation, max_t_test, test_statistics, FinalRule};
use crate::mbeta::regularized_estimate;
use crate::mvnorm::norm_quantile;
use crate::rng::{derive_master, task_rng};
use crate::sampling::{frechet_bounds, latent_correlation, sample_group_sizes, BinarySampler, GroupSizeModel};
use crate::selection::{
    optimal_efp, select_default, select_oracle, select_within_k_se, EfpOptions, ValidationData,
};
use crate::types::{ClassLabel, CoPrimaryEstimate, StudyConfig, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrStructure {
    Equicorrelation,
    Independence,
    /// `corr(i, j) = r^|i - j|`.
    Autocorrelation,
}

impl CorrStructure {
    /// Target correlation between columns `i` and `j`.
    pub fn entry(self, r: f64, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        match self {
            CorrStructure::Equicorrelation => r,
            CorrStructure::Independence => 0.0,
            CorrStructure::Autocorrelation => r.powi(i.abs_diff(j) as i32),
        }
    }

    pub fn matrix(self, r: f64, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| self.entry(r, i, j))
    }
}

impl FromStr for CorrStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equicorrelation" | "equi" => Ok(CorrStructure::Equicorrelation),
            "independence" | "indep" => Ok(CorrStructure::Independence),
            "autocorrelation" | "ar1" => Ok(CorrStructure::Autocorrelation),
            _ => Err(Error::InvalidArgument(format!("unknown correlation structure '{s}'"))),
        }
    }
}

/// One cell of an error-rate experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfcScenario {
    pub s: usize,
    pub theta0: Threshold,
    /// Distance between consecutive models at the boundary.
    pub epsilon: f64,
    pub prevalence: f64,
    pub n_total: usize,
    pub corr_strength: f64,
    pub corr_structure: CorrStructure,
    /// Upper bound on `prevalence * Se + (1 - prevalence) * Sp`.
    pub acc_cap: Option<f64>,
    pub n_sim: usize,
}

impl LfcScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ParameterOutOfRange(msg));
        if self.s == 0 {
            return bad("number of models must be at least 1".into());
        }
        if self.n_sim == 0 {
            return bad("n_sim must be at least 1".into());
        }
        if !(self.epsilon >= 0.0) || self.epsilon * (self.s - 1) as f64 >= self.theta0.se0().min(self.theta0.sp0()) {
            return bad(format!(
                "epsilon = {} leaves the unit interval for {} models",
                self.epsilon, self.s
            ));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} outside (0, 1)", self.prevalence));
        }
        if !(self.corr_strength > -1.0 && self.corr_strength < 1.0) {
            return bad(format!("correlation {} outside (-1, 1)", self.corr_strength));
        }
        if let Some(cap) = self.acc_cap {
            if !(cap > 0.0 && cap <= 1.0) {
                return bad(format!("accuracy cap {cap} outside (0, 1]"));
            }
        }
        let n1 = (self.prevalence * self.n_total as f64).round() as usize;
        if n1 == 0 || n1 >= self.n_total {
            return Err(Error::DegenerateGroupSizes {
                n: self.n_total,
                attempts: 1,
            });
        }
        Ok(())
    }

    fn group_sizes(&self) -> (usize, usize) {
        let n1 = (self.prevalence * self.n_total as f64).round() as usize;
        (n1, self.n_total - n1)
    }
}

/// Parameters near the least favorable configuration: model `m` (1-based)
/// sits `(m - 1) * epsilon` below the sensitivity threshold with perfect
/// specificity when `b[m]` is set, and `(S - m) * epsilon` below the
/// specificity threshold with perfect sensitivity otherwise.
pub fn lfc_parameters(s: usize, theta0: &Threshold, epsilon: f64, b: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if b.len() != s {
        return Err(Error::DimensionMismatch {
            context: "lfc indicator vector",
            expected: s,
            found: b.len(),
        });
    }
    if s == 0 {
        return Err(Error::EmptyModelSet);
    }
    if !(epsilon >= 0.0) || epsilon * (s - 1) as f64 >= theta0.se0().min(theta0.sp0()) {
        return Err(Error::ParameterOutOfRange(format!(
            "epsilon = {epsilon} leaves the unit interval for {s} models"
        )));
    }
    let se = (0..s)
        .map(|m| if b[m] { theta0.se0() - m as f64 * epsilon } else { 1.0 })
        .collect();
    let sp = (0..s)
        .map(|m| if b[m] { 1.0 } else { theta0.sp0() - (s - 1 - m) as f64 * epsilon })
        .collect();
    Ok((se, sp))
}

/// Lowers the perfect endpoint of every model so that
/// `prevalence * Se + (1 - prevalence) * Sp <= cap`. Endpoints below 1 are
/// left alone.
pub fn apply_acc_cap(se: &mut [f64], sp: &mut [f64], prevalence: f64, cap: f64) -> Result<()> {
    for m in 0..se.len() {
        if prevalence * se[m] + (1.0 - prevalence) * sp[m] <= cap {
            continue;
        }
        let (fixed, adjust, w) = if sp[m] == 1.0 && se[m] < 1.0 {
            (se[m] * prevalence, &mut sp[m], 1.0 - prevalence)
        } else if se[m] == 1.0 && sp[m] < 1.0 {
            (sp[m] * (1.0 - prevalence), &mut se[m], prevalence)
        } else {
            return Err(Error::ParameterOutOfRange(format!(
                "model {m} has no perfect endpoint to lower under accuracy cap {cap}"
            )));
        };
        let v = (cap - fixed) / w;
        if !(v > 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "accuracy cap {cap} unreachable for model {m}"
            )));
        }
        *adjust = v.min(1.0);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwerResult {
    pub fwer: f64,
    pub mc_se: f64,
    pub n_sim: usize,
    pub rejections_any: usize,
    /// Replicates whose latent correlation matrix had to be projected.
    pub projections: usize,
}

/// `floor(S / 2)` distinct positions set, uniformly; `(true)` when `S = 1`.
fn draw_lfc_indicator<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Vec<bool> {
    if s == 1 {
        return vec![true];
    }
    let mut b = vec![false; s];
    for i in sample_indices(rng, s, s / 2) {
        b[i] = true;
    }
    b
}

/// Latent correlations for one class, for the two values each column can take
/// (at the boundary, or lowered by the accuracy cap).
struct LatentTable {
    /// `values[k][m]`: mean of column `m` in state `k`.
    values: [Vec<f64>; 2],
    /// `latent[2 * k_i + k_j]`.
    latent: [DMatrix<f64>; 4],
}

impl LatentTable {
    fn new(values: [Vec<f64>; 2], structure: CorrStructure, r: f64) -> Result<Self> {
        let s = values[0].len();
        let build = |ki: usize, kj: usize| -> Result<DMatrix<f64>> {
            let mut out = DMatrix::identity(s, s);
            for i in 0..s {
                for j in 0..s {
                    let (p1, p2) = (values[ki][i], values[kj][j]);
                    if i == j || p1 >= 1.0 || p2 >= 1.0 {
                        continue;
                    }
                    let (lo, hi) = frechet_bounds(p1, p2);
                    let target = structure.entry(r, i, j).clamp(lo, hi);
                    out[(i, j)] = latent_correlation(p1, p2, target)?;
                }
            }
            Ok(out)
        };
        let latent = [build(0, 0)?, build(0, 1)?, build(1, 0)?, build(1, 1)?];
        Ok(LatentTable { values, latent })
    }

    /// Sampler for the means selected by `state` (0 or 1 per column).
    fn sampler(&self, state: &[usize], class: ClassLabel) -> Result<(BinarySampler, bool)> {
        let s = state.len();
        let means: Vec<f64> = (0..s).map(|m| self.values[state[m]][m]).collect();
        let latent = DMatrix::from_fn(s, s, |i, j| self.latent[2 * state[i] + state[j]][(i, j)]);
        BinarySampler::from_latent(&means, &latent, class)
    }
}

/// maxT decisions at threshold `thr`. The critical value lies between the
/// unadjusted and the Bonferroni quantile, so it is only computed when some
/// statistic falls in between.
fn decisions(est: &CoPrimaryEstimate, thr: &Threshold, alpha: f64, tol: f64, seed: u64) -> Result<Vec<bool>> {
    let stats = test_statistics(est, thr)?;
    let lo = norm_quantile(1.0 - alpha);
    let hi = norm_quantile(1.0 - alpha / stats.n_models() as f64);
    let c = if stats.t_min.iter().any(|&t| t > lo && t <= hi) {
        critical_value(&lfc_correlation(est, &stats)?, alpha, tol, seed)?
    } else {
        hi
    };
    Ok(stats.t_min.iter().map(|&t| t > c).collect())
}

/// Estimated probability that the maxT test rejects at least one true null
/// hypothesis under `scenario`. The threshold of the test is the scenario's;
/// `cfg` supplies the level and the integration tolerance.
pub fn simulate_fwer<R: Rng + ?Sized>(scenario: &LfcScenario, cfg: &StudyConfig, rng: &mut R) -> Result<FwerResult> {
    scenario.validate()?;
    cfg.validate()?;
    let s = scenario.s;
    let thr = scenario.theta0;
    let (n1, n0) = scenario.group_sizes();
    let all_b = vec![true; s];
    let (se_bd, _) = lfc_parameters(s, &thr, scenario.epsilon, &all_b)?;
    let (_, sp_bd) = lfc_parameters(s, &thr, scenario.epsilon, &vec![false; s])?;
    // Values of the perfect endpoints, possibly lowered by the cap.
    let (mut se_top, mut sp_top) = (vec![1.0; s], vec![1.0; s]);
    if let Some(cap) = scenario.acc_cap {
        apply_acc_cap(&mut se_top, &mut sp_bd.clone(), scenario.prevalence, cap)?;
        apply_acc_cap(&mut se_bd.clone(), &mut sp_top, scenario.prevalence, cap)?;
    }
    let se_table = LatentTable::new([se_bd.clone(), se_top.clone()], scenario.corr_structure, scenario.corr_strength)?;
    let sp_table = LatentTable::new([sp_bd.clone(), sp_top.clone()], scenario.corr_structure, scenario.corr_strength)?;

    let master = derive_master(rng);
    let outcomes: Vec<Result<(bool, bool)>> = (0..scenario.n_sim)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(master, i as u64);
            let b = draw_lfc_indicator(s, &mut rng);
            // State 0: endpoint at the boundary, state 1: perfect endpoint.
            let se_state: Vec<usize> = b.iter().map(|&x| (!x) as usize).collect();
            let sp_state: Vec<usize> = b.iter().map(|&x| x as usize).collect();
            let (se_s, p1) = se_table.sampler(&se_state, ClassLabel::Diseased)?;
            let (sp_s, p0) = sp_table.sampler(&sp_state, ClassLabel::Healthy)?;
            let q_se = se_s.sample(n1, &mut rng);
            let q_sp = sp_s.sample(n0, &mut rng);
            let est = regularized_estimate(&q_se, &q_sp)?;
            let rejected = decisions(&est, &thr, cfg.alpha, cfg.mc_tolerance, rng.random())?;
            let false_rejection = (0..s).any(|m| {
                let se_m = se_table.values[se_state[m]][m];
                let sp_m = sp_table.values[sp_state[m]][m];
                rejected[m] && (se_m <= thr.se0() || sp_m <= thr.sp0())
            });
            Ok((false_rejection, p1 || p0))
        })
        .collect();
    let mut hits = 0;
    let mut projections = 0;
    for o in outcomes {
        let (hit, proj) = o?;
        hits += hit as usize;
        projections += proj as usize;
    }
    let n = scenario.n_sim as f64;
    let fwer = hits as f64 / n;
    Ok(FwerResult {
        fwer,
        mc_se: (fwer * (1.0 - fwer) / n).sqrt(),
        n_sim: scenario.n_sim,
        rejections_any: hits,
        projections,
    })
}

/// True parameters and dependence of all candidate models.
#[derive(Debug, Clone)]
pub struct StudyTruth {
    se: Vec<f64>,
    sp: Vec<f64>,
    se_sampler: BinarySampler,
    sp_sampler: BinarySampler,
    /// Whether either latent correlation matrix had to be projected.
    pub projected: bool,
}

impl StudyTruth {
    /// `corr_se`, `corr_sp`: target correlations of the correct-prediction
    /// indicators. Entries outside the attainable range are clipped to it.
    pub fn new(se: Vec<f64>, sp: Vec<f64>, corr_se: &DMatrix<f64>, corr_sp: &DMatrix<f64>) -> Result<Self> {
        let m = se.len();
        if m == 0 {
            return Err(Error::EmptyModelSet);
        }
        for (len, ctx) in [(sp.len(), "truth specificities"), (corr_se.nrows(), "sensitivity correlation"), (corr_sp.nrows(), "specificity correlation")] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: m,
                    found: len,
                });
            }
        }
        if let Some(v) = se.iter().chain(&sp).find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::ParameterOutOfRange(format!("true accuracy {v} outside (0, 1]")));
        }
        let latent = |p: &[f64], c: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let mut out = DMatrix::identity(m, m);
            for i in 0..m {
                for j in (i + 1)..m {
                    if p[i] >= 1.0 || p[j] >= 1.0 {
                        continue;
                    }
                    let (lo, hi) = frechet_bounds(p[i], p[j]);
                    let r = latent_correlation(p[i], p[j], c[(i, j)].clamp(lo, hi))?;
                    out[(i, j)] = r;
                    out[(j, i)] = r;
                }
            }
            Ok(out)
        };
        let (se_sampler, p1) = BinarySampler::from_latent(&se, &latent(&se, corr_se)?, ClassLabel::Diseased)?;
        let (sp_sampler, p0) = BinarySampler::from_latent(&sp, &latent(&sp, corr_sp)?, ClassLabel::Healthy)?;
        Ok(StudyTruth {
            se,
            sp,
            se_sampler,
            sp_sampler,
            projected: p1 || p0,
        })
    }

    pub fn n_models(&self) -> usize {
        self.se.len()
    }

    pub fn se(&self) -> &[f64] {
        &self.se
    }

    pub fn sp(&self) -> &[f64] {
        &self.sp
    }

    pub fn vartheta(&self, delta0: f64) -> Vec<f64> {
        self.se.iter().zip(&self.sp).map(|(&a, &b)| a.min(b + delta0)).collect()
    }
}

/// Rule choosing the evaluated models from validation data.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionRule {
    Default,
    WithinKSe(f64),
    OptimalEfp(EfpOptions),
    Oracle,
    /// Every candidate.
    All,
}

impl SelectionRule {
    pub fn name(&self) -> String {
        match self {
            SelectionRule::Default => "default".into(),
            SelectionRule::WithinKSe(k) => format!("within_{k}_se"),
            SelectionRule::OptimalEfp(_) => "optimal_efp".into(),
            SelectionRule::Oracle => "oracle".into(),
            SelectionRule::All => "all".into(),
        }
    }
}

/// Sizes of the simulated study apart from the evaluation sample size, which
/// comes from the [`StudyConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyDesign {
    pub n_val: usize,
    /// Fixed disease prevalence of both validation and evaluation data.
    pub prevalence: f64,
    pub final_rule: FinalRule,
}

/// Threshold shifts `delta` of the reported rejection rates, where the
/// threshold is `vartheta_oracle - delta`.
pub const RR_DELTAS: [f64; 3] = [0.10, 0.05, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    /// Evaluated models (indices into the truth).
    pub selected: Vec<usize>,
    /// Decisions of the maxT test at the configured threshold, per selected model.
    pub rejected: Vec<bool>,
    /// Final model (index into the truth).
    pub final_model: usize,
    pub se_star: f64,
    pub sp_star: f64,
    pub vartheta_star: f64,
    /// Best true performance over all candidates.
    pub vartheta_oracle: f64,
    pub corrected_se_star: f64,
    pub corrected_sp_star: f64,
    /// Whether a model with a true null hypothesis was rejected at the
    /// configured threshold.
    pub false_rejection: bool,
    /// Rejection at threshold `vartheta_oracle - delta` for each of [`RR_DELTAS`].
    pub rr: [bool; 3],
    /// Rejection of the final model at threshold `vartheta_star`.
    pub conditional_rejection: bool,
    pub delta0: f64,
}

impl StudyRecord {
    pub fn corrected_vartheta_star(&self) -> f64 {
        self.corrected_se_star.min(self.corrected_sp_star + self.delta0)
    }
}

fn shifted_threshold(theta0: f64, delta0: f64) -> Result<Threshold> {
    Threshold::new(theta0.clamp(1e-9, 1.0 - 1e-9), (theta0 - delta0).clamp(1e-9, 1.0 - 1e-9))
}

/// One replicate of the full pipeline: validation data from the truth,
/// selection, independent evaluation data, maxT test and final model choice.
pub fn simulate_study<R: Rng + ?Sized>(
    truth: &StudyTruth,
    rule: &SelectionRule,
    design: &StudyDesign,
    cfg: &StudyConfig,
    rng: &mut R,
) -> Result<StudyRecord> {
    cfg.validate()?;
    let fixed = GroupSizeModel::Fixed {
        prevalence: design.prevalence,
    };
    let thr = cfg.threshold;
    let delta0 = thr.delta0();
    let vartheta = truth.vartheta(delta0);

    let selected = match rule {
        SelectionRule::Oracle => select_oracle(&truth.se, &truth.sp, &thr),
        SelectionRule::All => (0..truth.n_models()).collect(),
        _ => {
            let g = sample_group_sizes(design.n_val, &fixed, rng)?;
            let val = ValidationData::new(
                truth.se_sampler.sample(g.n1, rng),
                truth.sp_sampler.sample(g.n0, rng),
            )?;
            match rule {
                SelectionRule::Default => select_default(&val),
                SelectionRule::WithinKSe(k) => select_within_k_se(&val, *k),
                SelectionRule::OptimalEfp(opts) => {
                    let mut opts = *opts;
                    opts.group_sizes.get_or_insert(fixed);
                    optimal_efp(&val, cfg, &opts, rng)?.selected().to_vec()
                }
                _ => unreachable!(),
            }
        }
    };

    let g = sample_group_sizes(cfg.n_eval, &fixed, rng)?;
    let q_se = truth.se_sampler.sample(g.n1, rng).select_columns(&selected)?;
    let q_sp = truth.sp_sampler.sample(g.n0, rng).select_columns(&selected)?;
    let est = regularized_estimate(&q_se, &q_sp)?;
    let cfg_eval = cfg.with_seed(rng.random());
    let outcome = max_t_test(&est, &cfg_eval)?;
    let local = final_model(&outcome, design.final_rule, rng)
        .or_else(|| final_model(&outcome, FinalRule::MaxT, rng))
        .expect("at least one evaluated model");
    let m_star = selected[local];

    let false_rejection = selected
        .iter()
        .zip(&outcome.rejected)
        .any(|(&m, &r)| r && (truth.se[m] <= thr.se0() || truth.sp[m] <= thr.sp0()));
    let oracle = vartheta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rr = [false; 3];
    for (k, &d) in RR_DELTAS.iter().enumerate() {
        let t = shifted_threshold(oracle - d, delta0)?;
        rr[k] = decisions(&est, &t, cfg.alpha, cfg.mc_tolerance, cfg_eval.seed)?.contains(&true);
    }
    let t = shifted_threshold(vartheta[m_star], delta0)?;
    let conditional_rejection = decisions(&est, &t, cfg.alpha, cfg.mc_tolerance, cfg_eval.seed)?[local];

    Ok(StudyRecord {
        rejected: outcome.rejected.clone(),
        final_model: m_star,
        se_star: truth.se[m_star],
        sp_star: truth.sp[m_star],
        vartheta_star: vartheta[m_star],
        vartheta_oracle: oracle,
        corrected_se_star: outcome.corrected_se[local],
        corrected_sp_star: outcome.corrected_sp[local],
        false_rejection,
        rr,
        conditional_rejection,
        delta0,
        selected,
    })
}

/// Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub mean: f64,
    pub mc_se: f64,
}

impl Metric {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mc_se = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        Metric { mean, mc_se }
    }
}

/// Operating characteristics over many study replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub n_records: usize,
    pub tau: f64,
    pub e_vartheta: Metric,
    /// `P(vartheta_star > tau)`.
    pub p_vartheta_above: Metric,
    /// Rejection rates at [`RR_DELTAS`].
    pub rr: [Metric; 3],
    /// Conditional error rate `P(final model rejected | threshold = vartheta_star)`.
    pub fwer_conditional: Metric,
    /// Rate of rejecting a true null at the configured threshold.
    pub fwer: Metric,
    pub bias: Metric,
    pub mae2: Metric,
    /// Either corrected estimate of the final model too high.
    pub p_o1: Metric,
    /// Both corrected estimates of the final model too high.
    pub p_o2: Metric,
    pub e_s: Metric,
}

pub fn aggregate(records: &[StudyRecord], tau: f64) -> Result<StudySummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ind = |f: &dyn Fn(&StudyRecord) -> bool| Metric::of(records.iter().map(|r| f(r) as u8 as f64));
    let val = |f: &dyn Fn(&StudyRecord) -> f64| Metric::of(records.iter().map(f));
    Ok(StudySummary {
        n_records: records.len(),
        tau,
        e_vartheta: val(&|r| r.vartheta_star),
        p_vartheta_above: ind(&|r| r.vartheta_star > tau),
        rr: [ind(&|r| r.rr[0]), ind(&|r| r.rr[1]), ind(&|r| r.rr[2])],
        fwer_conditional: ind(&|r| r.conditional_rejection),
        fwer: ind(&|r| r.false_rejection),
        bias: val(&|r| r.corrected_vartheta_star() - r.vartheta_star),
        mae2: val(&|r| 0.5 * ((r.corrected_se_star - r.se_star).abs() + (r.corrected_sp_star - r.sp_star).abs())),
        p_o1: ind(&|r| r.corrected_se_star > r.se_star || r.corrected_sp_star > r.sp_star),
        p_o2: ind(&|r| r.corrected_se_star > r.se_star && r.corrected_sp_star > r.sp_star),
        e_s: val(&|r| r.selected.len() as f64),
    })
}

impl StudySummary {
    /// `(metric, mean, mc_se)` rows.
    pub fn rows(&self) -> Vec<(String, f64, f64)> {
        let mut out = vec![
            ("e_vartheta".to_string(), self.e_vartheta),
            (format!("p_vartheta_gt_{}", self.tau), self.p_vartheta_above),
        ];
        for (d, m) in RR_DELTAS.iter().zip(&self.rr) {
            out.push((format!("rr_{d:.2}"), *m));
        }
        out.extend([
            ("fwer_conditional".to_string(), self.fwer_conditional),
            ("fwer".to_string(), self.fwer),
            ("bias".to_string(), self.bias),
            ("mae2".to_string(), self.mae2),
            ("p_o1".to_string(), self.p_o1),
            ("p_o2".to_string(), self.p_o2),
            ("e_s".to_string(), self.e_s),
        ]);
        out.into_iter().map(|(k, m)| (k, m.mean, m.mc_se)).collect()
    }
}
