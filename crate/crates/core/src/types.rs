//! Shared domain types: similarity matrices, thresholds, estimates and study
//! configuration.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class of the subjects contributing rows to a similarity matrix.
///
/// Label 1 is the diseased class (target condition present), label 0 healthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Diseased,
    Healthy,
}

impl ClassLabel {
    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            1 => Some(ClassLabel::Diseased),
            0 => Some(ClassLabel::Healthy),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::Diseased => f.write_str("diseased"),
            ClassLabel::Healthy => f.write_str("healthy"),
        }
    }
}

/// Binary correct/incorrect prediction matrix of one class.
///
/// Rows are subjects, columns are models; an entry of 1 means the model
/// classified that subject correctly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
    class: ClassLabel,
}

impl SimilarityMatrix {
    /// Builds a matrix from row-major data already known to be binary.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<u8>, class: ClassLabel) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|&v| v <= 1));
        SimilarityMatrix {
            rows,
            cols,
            data,
            class,
        }
    }

    /// A matrix with `n_models` columns and no subjects.
    pub fn empty(n_models: usize, class: ClassLabel) -> Result<Self> {
        if n_models == 0 {
            return Err(Error::EmptyModelSet);
        }
        Ok(Self::from_raw(0, n_models, Vec::new(), class))
    }

    /// Builds a matrix from row-major data, validating every entry.
    pub fn from_row_major(
        rows: usize,
        cols: usize,
        data: Vec<u8>,
        class: ClassLabel,
    ) -> Result<Self> {
        if cols == 0 {
            return Err(Error::EmptyModelSet);
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "similarity matrix data length",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryEntry {
                row: pos / cols,
                col: pos % cols,
                value: data[pos] as i64,
            });
        }
        Ok(Self::from_raw(rows, cols, data, class))
    }

    pub fn n_subjects(&self) -> usize {
        self.rows
    }

    pub fn n_models(&self) -> usize {
        self.cols
    }

    pub fn class(&self) -> ClassLabel {
        self.class
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        // chunks_exact(0) panics, but a matrix always has at least one column.
        self.data.chunks_exact(self.cols)
    }

    /// Number of correct predictions per model.
    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.cols];
        for row in self.rows() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v as u64;
            }
        }
        sums
    }

    /// Empirical proportion of correct predictions per model. NaN when there
    /// are no subjects.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.column_sums().into_iter().map(|s| s as f64 / n).collect()
    }

    /// Restricts the matrix to the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::EmptyModelSet);
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.cols) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.cols,
            });
        }
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for row in self.rows() {
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(Self::from_raw(self.rows, columns.len(), data, self.class))
    }
}

/// Validates a raw integer matrix (one inner vector per subject) as a
/// similarity matrix of the given class.
pub fn validate_similarity(rows: &[Vec<i64>], class: ClassLabel) -> Result<SimilarityMatrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 {
        return Err(Error::EmptyModelSet);
    }
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "similarity matrix row length",
                expected: cols,
                found: row.len(),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            match v {
                0 | 1 => data.push(v as u8),
                _ => {
                    return Err(Error::NonBinaryEntry {
                        row: i,
                        col: j,
                        value: v,
                    })
                }
            }
        }
    }
    Ok(SimilarityMatrix::from_raw(rows.len(), cols, data, class))
}

/// Splits binary predictions (subjects x models) by the reference labels into
/// the diseased and healthy similarity matrices.
///
/// A diseased entry is 1 iff the model predicted 1; a healthy entry is 1 iff
/// the model predicted 0.
pub fn build_similarity(
    predictions: &[Vec<u8>],
    labels: &[u8],
) -> Result<(SimilarityMatrix, SimilarityMatrix)> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions rows vs labels",
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    let cols = match predictions.first() {
        Some(r) => r.len(),
        None => return Err(Error::EmptyModelSet),
    };
    if cols == 0 {
        return Err(Error::EmptyModelSet);
    }
    let mut se = Vec::new();
    let mut sp = Vec::new();
    let (mut n1, mut n0) = (0, 0);
    for (i, (row, &label)) in predictions.iter().zip(labels).enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "prediction row length",
                expected: cols,
                found: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|&p| p > 1) {
            return Err(Error::NonBinaryEntry {
                row: i,
                col: j,
                value: row[j] as i64,
            });
        }
        match label {
            1 => {
                se.extend_from_slice(row);
                n1 += 1;
            }
            0 => {
                sp.extend(row.iter().map(|&p| 1 - p));
                n0 += 1;
            }
            other => {
                return Err(Error::NonBinaryEntry {
                    row: i,
                    col: cols,
                    value: other as i64,
                })
            }
        }
    }
    Ok((
        SimilarityMatrix::from_raw(n1, cols, se, ClassLabel::Diseased),
        SimilarityMatrix::from_raw(n0, cols, sp, ClassLabel::Healthy),
    ))
}

/// Performance thresholds (Se0, Sp0) that every positively evaluated model
/// has to exceed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    se0: f64,
    sp0: f64,
}

impl Threshold {
    pub fn new(se0: f64, sp0: f64) -> Result<Self> {
        for (name, v) in [("se0", se0), ("sp0", sp0)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::ParameterOutOfRange(format!(
                    "{name} = {v} must lie in (0, 1)"
                )));
            }
        }
        Ok(Threshold { se0, sp0 })
    }

    /// Threshold from the sensitivity bound and the offset `delta0 = se0 - sp0`.
    pub fn from_delta(se0: f64, delta0: f64) -> Result<Self> {
        Self::new(se0, se0 - delta0)
    }

    pub fn se0(&self) -> f64 {
        self.se0
    }

    pub fn sp0(&self) -> f64 {
        self.sp0
    }

    pub fn delta0(&self) -> f64 {
        self.se0 - self.sp0
    }

    /// Equal thresholds for both endpoints.
    pub fn symmetric(theta0: f64) -> Result<Self> {
        Self::new(theta0, theta0)
    }
}

/// Paired sensitivity/specificity estimates of `S` models with their
/// covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CoPrimaryEstimate {
    pub se_mean: DVector<f64>,
    pub sp_mean: DVector<f64>,
    pub se_cov: DMatrix<f64>,
    pub sp_cov: DMatrix<f64>,
    pub n1: usize,
    pub n0: usize,
}

impl CoPrimaryEstimate {
    pub fn n_models(&self) -> usize {
        self.se_mean.len()
    }

    pub fn se_stderr(&self) -> DVector<f64> {
        self.se_cov.diagonal().map(f64::sqrt)
    }

    pub fn sp_stderr(&self) -> DVector<f64> {
        self.sp_cov.diagonal().map(f64::sqrt)
    }

    /// Restricts the estimate to a subset of models, in the given order.
    pub fn select(&self, models: &[usize]) -> Result<Self> {
        let s = self.n_models();
        if models.is_empty() {
            return Err(Error::EmptyModelSet);
        }
        if let Some(&bad) = models.iter().find(|&&m| m >= s) {
            return Err(Error::IndexOutOfRange { index: bad, len: s });
        }
        let k = models.len();
        Ok(CoPrimaryEstimate {
            se_mean: DVector::from_fn(k, |i, _| self.se_mean[models[i]]),
            sp_mean: DVector::from_fn(k, |i, _| self.sp_mean[models[i]]),
            se_cov: DMatrix::from_fn(k, k, |i, j| self.se_cov[(models[i], models[j])]),
            sp_cov: DMatrix::from_fn(k, k, |i, j| self.sp_cov[(models[i], models[j])]),
            n1: self.n1,
            n0: self.n0,
        })
    }
}

/// Default one-sided significance level.
pub const DEFAULT_ALPHA: f64 = 0.025;

/// Default probability tolerance of the critical-value search.
pub const DEFAULT_MC_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub threshold: Threshold,
    pub alpha: f64,
    /// Planned evaluation sample size.
    pub n_eval: usize,
    pub seed: u64,
    /// Probability tolerance for the multivariate-normal quantile.
    pub mc_tolerance: f64,
}

impl StudyConfig {
    pub fn new(threshold: Threshold) -> Self {
        StudyConfig {
            threshold,
            alpha: DEFAULT_ALPHA,
            n_eval: 0,
            seed: 0,
            mc_tolerance: DEFAULT_MC_TOLERANCE,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_n_eval(mut self, n_eval: usize) -> Self {
        self.n_eval = n_eval;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::ParameterOutOfRange(format!(
                "alpha = {} must lie in (0, 0.5)",
                self.alpha
            )));
        }
        if !(self.mc_tolerance > 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "mc_tolerance = {} must be positive",
                self.mc_tolerance
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_accepts_binary() {
        let q = validate_similarity(&[vec![1, 0], vec![1, 1]], ClassLabel::Diseased).unwrap();
        assert_eq!(q.n_subjects(), 2);
        assert_eq!(q.n_models(), 2);
        assert_eq!(q.get(0, 1), 0);
        assert_eq!(q.class(), ClassLabel::Diseased);
    }

    #[test]
    fn validate_rejects_non_binary() {
        let err = validate_similarity(&[vec![2, 0]], ClassLabel::Diseased).unwrap_err();
        assert!(matches!(
            err,
            Error::NonBinaryEntry {
                row: 0,
                col: 0,
                value: 2
            }
        ));
    }

    #[test]
    fn validate_rejects_empty() {
        assert_eq!(
            validate_similarity(&[], ClassLabel::Healthy).unwrap_err(),
            Error::EmptyModelSet
        );
        assert_eq!(
            validate_similarity(&[vec![]], ClassLabel::Healthy).unwrap_err(),
            Error::EmptyModelSet
        );
    }

    #[test]
    fn build_similarity_examples() {
        let (se, sp) = build_similarity(&[vec![1], vec![0], vec![0]], &[1, 0, 1]).unwrap();
        assert_eq!(se.rows().collect::<Vec<_>>(), vec![&[1u8][..], &[0u8][..]]);
        assert_eq!(sp.rows().collect::<Vec<_>>(), vec![&[1u8][..]]);

        let (se, sp) = build_similarity(&[vec![1, 0]], &[0]).unwrap();
        assert_eq!(se.n_subjects(), 0);
        assert_eq!(se.n_models(), 2);
        assert_eq!(sp.row(0), &[0, 1]);
    }

    #[test]
    fn perfect_classifier_gives_all_ones() {
        let labels = [1u8, 0, 0, 1, 1];
        let preds: Vec<Vec<u8>> = labels.iter().map(|&l| vec![l, l, l]).collect();
        let (se, sp) = build_similarity(&preds, &labels).unwrap();
        assert!(se.rows().flatten().all(|&v| v == 1));
        assert!(sp.rows().flatten().all(|&v| v == 1));
        assert_eq!(se.n_subjects() + sp.n_subjects(), labels.len());
    }

    #[test]
    fn build_similarity_dimension_mismatch() {
        let err = build_similarity(&[vec![1]], &[1, 0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn threshold_delta() {
        let t = Threshold::new(0.8, 0.7).unwrap();
        assert_eq!(t.delta0(), 0.8 - 0.7);
        assert!(Threshold::new(1.0, 0.5).is_err());
        assert!(Threshold::new(0.5, 0.0).is_err());
    }

    #[test]
    fn study_config_defaults() {
        let cfg = StudyConfig::new(Threshold::symmetric(0.8).unwrap());
        assert_eq!(cfg.alpha, 0.025);
        assert!(cfg.validate().is_ok());
        assert!(cfg.with_alpha(0.5).validate().is_err());
    }
}
