//! Command-line front end.
//!
//! Settings are resolved as command-line flags, then the `--config` file, then
//! built-in defaults. Reports are written to `--out-dir` (or the directory in
//! `COPRIMARY_OUT_DIR`) when given, otherwise to standard output.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::error::Error;
use crate::inference::{final_model, max_t_test, FinalRule};
use crate::mbeta::regularized_estimate;
use crate::rng::{derive_master, seeded, task_rng};
use crate::selection::{
    default_s_max, optimal_efp, select_default, select_within_k_se, EfpOptions, SStarRule, ValidationData,
    DEFAULT_MAX_ITER, DEFAULT_NUM_TOL,
};
use crate::sim::{simulate_fwer, CorrStructure, LfcScenario};
use crate::types::{build_similarity, StudyConfig, Threshold, DEFAULT_ALPHA, DEFAULT_MC_TOLERANCE};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SEED: u64 = 1;
pub const OUT_DIR_ENV: &str = "COPRIMARY_OUT_DIR";

/// Exit status of a run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// The evaluation study ran but no model was positively evaluated.
pub const EXIT_STUDY_FAILED: i32 = 2;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "coprimary", version, about = "Simultaneous evaluation of binary classifiers on sensitivity and specificity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat TOML file with default settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub se0: Option<f64>,
    #[arg(long)]
    pub sp0: Option<f64>,
    /// Offset se0 - sp0, used when sp0 is not given.
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub s_max: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub num_tol: Option<f64>,
    /// Probability tolerance of the critical-value search.
    #[arg(long)]
    pub mc_tolerance: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the maxT test on evaluation data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// CSV with a `label` column and one column per model.
        #[arg(long, conflicts_with_all = ["predictions", "labels"])]
        data: Option<PathBuf>,
        /// CSV with one column per model (use with --labels).
        #[arg(long, requires = "labels")]
        predictions: Option<PathBuf>,
        /// CSV with a `label` column.
        #[arg(long, requires = "predictions")]
        labels: Option<PathBuf>,
        /// `max_t` or `weighted:<w>` (largest w*Se + (1-w)*Sp among rejected models).
        #[arg(long)]
        final_rule: Option<String>,
    },
    /// Choose the models to evaluate from validation data.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// `default`, `within_k_se` or `optimal_efp`.
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        k: Option<f64>,
        /// `one_se` or `argmax`.
        #[arg(long)]
        s_star_rule: Option<String>,
    },
    /// Same as `select --rule optimal_efp`.
    PlanEfp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        s_star_rule: Option<String>,
    },
    /// Family-wise error rates over a grid of least favorable scenarios.
    SimulateLfc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_sim: Option<usize>,
    },
}

/// Contents of a `--config` file. Scalars apply to every subcommand; the
/// array-valued keys span the scenario grid of `simulate-lfc`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    pub se0: Option<f64>,
    pub sp0: Option<f64>,
    pub delta0: Option<f64>,
    pub seed: Option<u64>,
    pub n_eval: Option<usize>,
    pub s_max: Option<usize>,
    pub max_iter: Option<usize>,
    pub num_tol: Option<f64>,
    pub mc_tolerance: Option<f64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
    pub rule: Option<String>,
    pub k: Option<f64>,
    pub s_star_rule: Option<String>,
    pub final_rule: Option<String>,
    pub n_sim: Option<usize>,
    pub models: Option<Vec<usize>>,
    pub theta0: Option<Vec<f64>>,
    pub epsilon: Option<Vec<f64>>,
    pub prevalence: Option<Vec<f64>>,
    pub n: Option<Vec<usize>>,
    pub corr_strength: Option<Vec<f64>>,
    pub corr_structure: Option<Vec<String>>,
    pub acc_cap: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].matches('\n').count() as u64 + 1
}

pub fn load_config(path: &Path) -> CliResult<FileConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e: toml::de::Error| CliError::Parse {
        path: path.display().to_string(),
        line: e.span().map_or(1, |s| line_of(&text, s.start)),
        msg: e.message().to_string(),
    })
}

/// Settings after merging flags, file and defaults.
#[derive(Debug, Clone)]
struct Settings {
    alpha: f64,
    se0: Option<f64>,
    sp0: Option<f64>,
    delta0: Option<f64>,
    seed: u64,
    n_eval: Option<usize>,
    s_max: Option<usize>,
    max_iter: usize,
    num_tol: f64,
    mc_tolerance: f64,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    format: Format,
}

impl Settings {
    fn resolve(c: &Common, f: &FileConfig) -> Self {
        Settings {
            alpha: c.alpha.or(f.alpha).unwrap_or(DEFAULT_ALPHA),
            se0: c.se0.or(f.se0),
            sp0: c.sp0.or(f.sp0),
            delta0: c.delta0.or(f.delta0),
            seed: c.seed.or(f.seed).unwrap_or(DEFAULT_SEED),
            n_eval: c.n_eval.or(f.n_eval),
            s_max: c.s_max.or(f.s_max),
            max_iter: c.max_iter.or(f.max_iter).unwrap_or(DEFAULT_MAX_ITER),
            num_tol: c.num_tol.or(f.num_tol).unwrap_or(DEFAULT_NUM_TOL),
            mc_tolerance: c.mc_tolerance.or(f.mc_tolerance).unwrap_or(DEFAULT_MC_TOLERANCE),
            workers: c.workers.or(f.workers),
            out_dir: c
                .out_dir
                .clone()
                .or_else(|| f.out_dir.clone())
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)),
            format: c.format.or(f.format).unwrap_or(Format::Json),
        }
    }

    /// `sp0` wins over `delta0`; without either the thresholds are equal.
    fn threshold(&self) -> CliResult<Threshold> {
        let se0 = self
            .se0
            .ok_or_else(|| CliError::Config("se0 is required".into()))?;
        let sp0 = self.sp0.unwrap_or(se0 - self.delta0.unwrap_or(0.0));
        Ok(Threshold::new(se0, sp0)?)
    }

    fn study_config(&self, threshold: Threshold) -> CliResult<StudyConfig> {
        let mut cfg = StudyConfig::new(threshold)
            .with_alpha(self.alpha)
            .with_seed(self.seed)
            .with_n_eval(self.n_eval.unwrap_or(0));
        cfg.mc_tolerance = self.mc_tolerance;
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(CliError::Config("workers must be at least 1".into()));
            }
            b = b.num_threads(w);
        }
        b.build().map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Binary model predictions with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub predictions: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

struct Table {
    header: Vec<String>,
    /// `(line, cells)`.
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> CliResult<Table> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(&name, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(&name, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(CliError::Parse {
                path: name,
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn csv_err(path: &str, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_string(),
            source,
        },
        kind => CliError::Parse {
            path: path.to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

fn binary_cell(path: &Path, line: u64, column: &str, cell: &str) -> CliResult<u8> {
    match cell {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(CliError::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("column '{column}': expected 0 or 1, found '{cell}'"),
        }),
    }
}

fn label_index(path: &Path, header: &[String]) -> CliResult<usize> {
    header.iter().position(|h| h == "label").ok_or_else(|| CliError::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: "no 'label' column".into(),
    })
}

/// Reads a CSV with a `label` column; every other column is a model.
pub fn read_combined(path: &Path) -> CliResult<Dataset> {
    let t = read_table(path)?;
    let li = label_index(path, &t.header)?;
    let names: Vec<String> = t.header.iter().enumerate().filter(|&(j, _)| j != li).map(|(_, h)| h.clone()).collect();
    if names.is_empty() {
        return Err(CliError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "no model columns".into(),
        });
    }
    let mut predictions = Vec::with_capacity(t.rows.len());
    let mut labels = Vec::with_capacity(t.rows.len());
    for (line, cells) in &t.rows {
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in cells.iter().enumerate() {
            let v = binary_cell(path, *line, &t.header[j], cell)?;
            if j == li {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        predictions.push(row);
    }
    Ok(Dataset {
        names,
        predictions,
        labels,
    })
}

/// Reads predictions and labels from separate files with matching rows.
pub fn read_separate(predictions: &Path, labels: &Path) -> CliResult<Dataset> {
    let p = read_table(predictions)?;
    let l = read_table(labels)?;
    let li = if l.header.len() == 1 { 0 } else { label_index(labels, &l.header)? };
    if p.rows.len() != l.rows.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction rows vs label rows",
            expected: l.rows.len(),
            found: p.rows.len(),
        }
        .into());
    }
    let mut preds = Vec::with_capacity(p.rows.len());
    for (line, cells) in &p.rows {
        let row = cells
            .iter()
            .enumerate()
            .map(|(j, c)| binary_cell(predictions, *line, &p.header[j], c))
            .collect::<CliResult<Vec<u8>>>()?;
        preds.push(row);
    }
    let labs = l
        .rows
        .iter()
        .map(|(line, cells)| binary_cell(labels, *line, &l.header[li], &cells[li]))
        .collect::<CliResult<Vec<u8>>>()?;
    Ok(Dataset {
        names: p.header,
        predictions: preds,
        labels: labs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub se_hat: f64,
    pub sp_hat: f64,
    pub t_se: f64,
    pub t_sp: f64,
    pub t_min: f64,
    pub rejected: bool,
    pub ci_lower_se: f64,
    pub ci_lower_sp: f64,
    pub corrected_se: f64,
    pub corrected_sp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool_version: String,
    pub seed: u64,
    pub alpha: f64,
    pub se0: f64,
    pub sp0: f64,
    pub c_alpha: f64,
    pub n1: usize,
    pub n0: usize,
    pub final_model: Option<String>,
    pub any_rejected: bool,
    pub models: Vec<ModelRow>,
}

fn parse_final_rule(s: &str) -> CliResult<FinalRule> {
    if s == "max_t" {
        return Ok(FinalRule::MaxT);
    }
    if let Some(w) = s.strip_prefix("weighted:") {
        let w: f64 = w
            .parse()
            .map_err(|_| CliError::Config(format!("bad weight in final rule '{s}'")))?;
        if (0.0..=1.0).contains(&w) {
            return Ok(FinalRule::MaxWeighted(w));
        }
    }
    Err(CliError::Config(format!(
        "unknown final rule '{s}' (expected max_t or weighted:<w> with w in [0, 1])"
    )))
}

pub fn evaluate(data: &Dataset, cfg: &StudyConfig, rule: FinalRule) -> CliResult<EvaluationReport> {
    let (q_se, q_sp) = build_similarity(&data.predictions, &data.labels)?;
    let est = regularized_estimate(&q_se, &q_sp)?;
    let out = max_t_test(&est, cfg)?;
    let mut rng = seeded(cfg.seed);
    let final_idx = final_model(&out, rule, &mut rng);
    let st = &out.statistics;
    let models = (0..out.n_models())
        .map(|m| ModelRow {
            name: data.names[m].clone(),
            se_hat: out.se_hat[m],
            sp_hat: out.sp_hat[m],
            t_se: st.t_se[m],
            t_sp: st.t_sp[m],
            t_min: st.t_min[m],
            rejected: out.rejected[m],
            ci_lower_se: out.ci_lower_se[m],
            ci_lower_sp: out.ci_lower_sp[m],
            corrected_se: out.corrected_se[m],
            corrected_sp: out.corrected_sp[m],
        })
        .collect();
    Ok(EvaluationReport {
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        alpha: cfg.alpha,
        se0: cfg.threshold.se0(),
        sp0: cfg.threshold.sp0(),
        c_alpha: out.critical_value,
        n1: q_se.n_subjects(),
        n0: q_sp.n_subjects(),
        final_model: final_idx.map(|m| data.names[m].clone()),
        any_rejected: out.any_rejected(),
        models,
    })
}

fn evaluation_csv(r: &EvaluationReport) -> String {
    let mut s = String::from(
        "name,se_hat,sp_hat,t_se,t_sp,t_min,rejected,ci_lower_se,ci_lower_sp,corrected_se,corrected_sp,final,c_alpha,alpha,se0,sp0,n1,n0,seed\n",
    );
    for m in &r.models {
        let fin = r.final_model.as_deref() == Some(m.name.as_str());
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&m.name),
            m.se_hat,
            m.sp_hat,
            m.t_se,
            m.t_sp,
            m.t_min,
            m.rejected,
            m.ci_lower_se,
            m.ci_lower_sp,
            m.corrected_se,
            m.corrected_sp,
            fin,
            r.c_alpha,
            r.alpha,
            r.se0,
            r.sp0,
            r.n1,
            r.n0,
            r.seed
        )
        .unwrap();
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub efp: Vec<f64>,
    pub se: Vec<f64>,
    pub s_star: usize,
    pub s_argmax: usize,
    pub iterations_used: usize,
    /// Model names in ranked order.
    pub ranking: Vec<String>,
    pub projections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tool_version: String,
    pub seed: u64,
    pub rule: String,
    pub se0: f64,
    pub sp0: f64,
    pub n_eval: Option<usize>,
    /// 0-based column indices of the selected models.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub curve: Option<CurveReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleChoice {
    Default,
    WithinKSe(f64),
    OptimalEfp(SStarRule),
}

pub fn select(data: &Dataset, rule: &RuleChoice, s: &SelectOptions) -> CliResult<SelectionReport> {
    let (q_se, q_sp) = build_similarity(&data.predictions, &data.labels)?;
    let val = ValidationData::new(q_se, q_sp)?;
    let (name, selected, curve) = match rule {
        RuleChoice::Default => ("default".to_string(), select_default(&val), None),
        RuleChoice::WithinKSe(k) => (format!("within_{k}_se"), select_within_k_se(&val, *k), None),
        RuleChoice::OptimalEfp(s_rule) => {
            let n_eval = s.cfg.n_eval;
            if n_eval < 2 {
                return Err(CliError::Config("optimal_efp needs n_eval of at least 2".into()));
            }
            let mut opts = EfpOptions::new(n_eval);
            opts.s_max = s.s_max.unwrap_or_else(|| default_s_max(n_eval));
            opts.max_iter = s.max_iter;
            opts.num_tol = s.num_tol;
            opts.rule = *s_rule;
            let mut rng = seeded(s.cfg.seed);
            let c = optimal_efp(&val, &s.cfg, &opts, &mut rng)?;
            let report = CurveReport {
                efp: c.efp.clone(),
                se: c.se.clone(),
                s_star: c.s_star,
                s_argmax: c.s_argmax,
                iterations_used: c.iterations_used,
                ranking: c.ranking.iter().map(|&m| data.names[m].clone()).collect(),
                projections: c.projections,
            };
            ("optimal_efp".to_string(), c.selected().to_vec(), Some(report))
        }
    };
    Ok(SelectionReport {
        tool_version: TOOL_VERSION.to_string(),
        seed: s.cfg.seed,
        rule: name,
        se0: s.cfg.threshold.se0(),
        sp0: s.cfg.threshold.sp0(),
        n_eval: (s.cfg.n_eval > 0).then_some(s.cfg.n_eval),
        selected_names: selected.iter().map(|&m| data.names[m].clone()).collect(),
        selected,
        curve,
    })
}

/// Inputs of [`select`] besides the data and the rule.
#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub cfg: StudyConfig,
    pub s_max: Option<usize>,
    pub max_iter: usize,
    pub num_tol: f64,
}

fn selection_csv(r: &SelectionReport) -> String {
    let mut s = String::new();
    match &r.curve {
        Some(c) => {
            s.push_str("s,efp,se,s_star,s_argmax,model,seed\n");
            for i in 0..c.efp.len() {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    i + 1,
                    c.efp[i],
                    c.se[i],
                    i + 1 == c.s_star,
                    i + 1 == c.s_argmax,
                    csv_field(&c.ranking[i]),
                    r.seed
                )
                .unwrap();
            }
        }
        None => {
            s.push_str("index,model,rule,seed\n");
            for (&i, n) in r.selected.iter().zip(&r.selected_names) {
                writeln!(s, "{i},{},{},{}", csv_field(n), r.rule, r.seed).unwrap();
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfcRow {
    pub s: usize,
    pub se0: f64,
    pub sp0: f64,
    pub epsilon: f64,
    pub prevalence: f64,
    pub n: usize,
    pub corr_structure: CorrStructure,
    pub corr_strength: f64,
    pub acc_cap: Option<f64>,
    pub n_sim: usize,
    pub fwer: f64,
    pub mc_se: f64,
    pub rejections: usize,
    pub seed: u64,
}

/// Cartesian product of the grid keys of `f`.
pub fn lfc_grid(f: &FileConfig, n_sim: usize) -> CliResult<Vec<LfcScenario>> {
    let need = |v: &Option<Vec<f64>>, k: &str| v.clone().ok_or_else(|| CliError::Config(format!("missing grid key '{k}'")));
    let models = f.models.clone().ok_or_else(|| CliError::Config("missing grid key 'models'".into()))?;
    let theta0 = need(&f.theta0, "theta0")?;
    let epsilon = f.epsilon.clone().unwrap_or(vec![0.0]);
    let prevalence = f.prevalence.clone().unwrap_or(vec![0.2]);
    let ns = f.n.clone().ok_or_else(|| CliError::Config("missing grid key 'n'".into()))?;
    let strength = f.corr_strength.clone().unwrap_or(vec![0.5]);
    let structures = f
        .corr_structure
        .clone()
        .unwrap_or(vec!["equicorrelation".into()])
        .iter()
        .map(|s| s.parse::<CorrStructure>())
        .collect::<Result<Vec<_>, Error>>()?;
    let mut out = Vec::new();
    for &s in &models {
        for &t in &theta0 {
            for &e in &epsilon {
                for &p in &prevalence {
                    for &cs in &structures {
                        for &r in &strength {
                            for &n in &ns {
                                let sc = LfcScenario {
                                    s,
                                    theta0: Threshold::symmetric(t)?,
                                    epsilon: e,
                                    prevalence: p,
                                    n_total: n,
                                    corr_strength: r,
                                    corr_structure: cs,
                                    acc_cap: f.acc_cap,
                                    n_sim,
                                };
                                sc.validate()?;
                                out.push(sc);
                            }
                        }
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("empty scenario grid".into()));
    }
    Ok(out)
}

pub fn simulate_grid(grid: &[LfcScenario], alpha: f64, tol: f64, seed: u64) -> CliResult<Vec<LfcRow>> {
    let master = derive_master(&mut seeded(seed));
    grid.iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut cfg = StudyConfig::new(sc.theta0).with_alpha(alpha);
            cfg.mc_tolerance = tol;
            let r = simulate_fwer(sc, &cfg, &mut task_rng(master, i as u64))?;
            Ok(LfcRow {
                s: sc.s,
                se0: sc.theta0.se0(),
                sp0: sc.theta0.sp0(),
                epsilon: sc.epsilon,
                prevalence: sc.prevalence,
                n: sc.n_total,
                corr_structure: sc.corr_structure,
                corr_strength: sc.corr_strength,
                acc_cap: sc.acc_cap,
                n_sim: r.n_sim,
                fwer: r.fwer,
                mc_se: r.mc_se,
                rejections: r.rejections_any,
                seed,
            })
        })
        .collect()
}

fn lfc_csv(rows: &[LfcRow]) -> String {
    let mut s = String::from(
        "s,se0,sp0,epsilon,prevalence,n,corr_structure,corr_strength,acc_cap,n_sim,fwer,mc_se,rejections,seed\n",
    );
    for r in rows {
        let structure = serde_json::to_value(r.corr_structure).unwrap();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.s,
            r.se0,
            r.sp0,
            r.epsilon,
            r.prevalence,
            r.n,
            structure.as_str().unwrap(),
            r.corr_strength,
            r.acc_cap.map_or(String::new(), |c| c.to_string()),
            r.n_sim,
            r.fwer,
            r.mc_se,
            r.rejections,
            r.seed
        )
        .unwrap();
    }
    s
}

fn emit(settings: &Settings, stem: &str, json: impl Fn() -> String, csv: impl Fn() -> String) -> CliResult<()> {
    let (body, ext) = match settings.format {
        Format::Json => (json(), "json"),
        Format::Csv => (csv(), "csv"),
    };
    match &settings.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(format!("{stem}.{ext}"));
            fs::write(&path, body).map_err(io_err(&path))
        }
        None => io::stdout()
            .write_all(body.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn file_config(c: &Common) -> CliResult<FileConfig> {
    c.config.as_deref().map_or(Ok(FileConfig::default()), load_config)
}

/// Runs one parsed command and returns its exit status.
pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Evaluate {
            common,
            data,
            predictions,
            labels,
            final_rule,
        } => {
            let f = file_config(&common)?;
            let s = Settings::resolve(&common, &f);
            let rule = parse_final_rule(final_rule.as_deref().or(f.final_rule.as_deref()).unwrap_or("max_t"))?;
            let cfg = s.study_config(s.threshold()?)?;
            let ds = match (data, predictions, labels) {
                (Some(d), _, _) => read_combined(&d)?,
                (None, Some(p), Some(l)) => read_separate(&p, &l)?,
                _ => return Err(CliError::Config("give --data or both --predictions and --labels".into())),
            };
            let report = s.pool()?.install(|| evaluate(&ds, &cfg, rule))?;
            emit(&s, "evaluation", || to_json(&report), || evaluation_csv(&report))?;
            Ok(if report.any_rejected { EXIT_OK } else { EXIT_STUDY_FAILED })
        }
        Command::Select {
            common,
            data,
            rule,
            k,
            s_star_rule,
        } => run_select(&common, &data, rule, k, s_star_rule),
        Command::PlanEfp {
            common,
            data,
            s_star_rule,
        } => run_select(&common, &data, Some("optimal_efp".into()), None, s_star_rule),
        Command::SimulateLfc { common, n_sim } => {
            let f = file_config(&common)?;
            let s = Settings::resolve(&common, &f);
            let n_sim = n_sim.or(f.n_sim).unwrap_or(10_000);
            let grid = lfc_grid(&f, n_sim)?;
            let rows = s
                .pool()?
                .install(|| simulate_grid(&grid, s.alpha, s.mc_tolerance, s.seed))?;
            emit(&s, "simulate_lfc", || to_json(&rows), || lfc_csv(&rows))?;
            Ok(EXIT_OK)
        }
    }
}

fn run_select(
    common: &Common,
    data: &Path,
    rule: Option<String>,
    k: Option<f64>,
    s_star_rule: Option<String>,
) -> CliResult<i32> {
    let f = file_config(common)?;
    let s = Settings::resolve(common, &f);
    let s_rule: SStarRule = s_star_rule
        .or(f.s_star_rule.clone())
        .map_or(Ok(SStarRule::default()), |r| r.parse())?;
    let choice = match rule.or(f.rule.clone()).as_deref().unwrap_or("default") {
        "default" => RuleChoice::Default,
        "within_k_se" => RuleChoice::WithinKSe(k.or(f.k).unwrap_or(1.0)),
        "optimal_efp" => RuleChoice::OptimalEfp(s_rule),
        other => {
            return Err(CliError::Config(format!(
                "unknown selection rule '{other}' (expected default, within_k_se or optimal_efp)"
            )))
        }
    };
    let cfg = s.study_config(s.threshold()?)?;
    let ds = read_combined(data)?;
    let opts = SelectOptions {
        cfg,
        s_max: s.s_max,
        max_iter: s.max_iter,
        num_tol: s.num_tol,
    };
    let report = s.pool()?.install(|| select(&ds, &choice, &opts))?;
    emit(&s, "selection", || to_json(&report), || selection_csv(&report))?;
    Ok(EXIT_OK)
}

/// Entry point of the binary: parses `std::env::args` and maps errors to
/// exit status 1.
pub fn main_exit() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
