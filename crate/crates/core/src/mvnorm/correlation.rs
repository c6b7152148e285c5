use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this bound are treated as a genuinely indefinite matrix
/// rather than rounding noise.
pub const PSD_FAIL_BOUND: f64 = -1e-8;

const SYMMETRY_TOL: f64 = 1e-10;
const DIAGONAL_TOL: f64 = 1e-8;

/// Symmetric, unit-diagonal, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validates `entries`, repairing small negative eigenvalues by clipping.
    ///
    /// Fails if the smallest eigenvalue is below [`PSD_FAIL_BOUND`].
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let entries = check_shape(entries)?;
        if entries.clone().cholesky().is_some() {
            return Ok(CorrelationMatrix { entries });
        }
        let eig = SymmetricEigen::new(entries.clone());
        let min = eig.eigenvalues.min();
        if min < PSD_FAIL_BOUND {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        if min >= 0.0 {
            return Ok(CorrelationMatrix { entries });
        }
        Ok(CorrelationMatrix {
            entries: clip_and_normalize(eig),
        })
    }

    /// Projects `entries` onto the correlation matrices by clipping negative
    /// eigenvalues and re-normalizing the diagonal, whatever their size.
    ///
    /// Returns the matrix and whether a projection was necessary.
    pub fn project(entries: DMatrix<f64>) -> Result<(Self, bool)> {
        let entries = check_shape(entries)?;
        if entries.clone().cholesky().is_some() {
            return Ok((CorrelationMatrix { entries }, false));
        }
        let eig = SymmetricEigen::new(entries.clone());
        if eig.eigenvalues.min() >= 0.0 {
            return Ok((CorrelationMatrix { entries }, false));
        }
        Ok((
            CorrelationMatrix {
                entries: clip_and_normalize(eig),
            },
            true,
        ))
    }

    pub fn identity(dim: usize) -> Self {
        CorrelationMatrix {
            entries: DMatrix::identity(dim, dim),
        }
    }

    /// Constant off-diagonal correlation `r`.
    pub fn equicorrelation(dim: usize, r: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { r }))
    }

    /// First-order autoregressive structure `r^|i - j|`.
    pub fn ar1(dim: usize, r: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(dim, dim, |i, j| {
            r.powi((i as i32 - j as i32).abs())
        }))
    }

    /// Correlation matrix of a covariance matrix with positive diagonal.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
        if let Some(i) = sd.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ParameterOutOfRange(format!(
                "variance of component {i} is not positive"
            )));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else {
                (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Principal submatrix over `idx`, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> CorrelationMatrix {
        CorrelationMatrix {
            entries: DMatrix::from_fn(idx.len(), idx.len(), |i, j| {
                self.entries[(idx[i], idx[j])]
            }),
        }
    }

    /// Lower-triangular `L` with `L L^T` equal to the matrix. Directions with
    /// (numerically) zero residual variance get a zero column, so singular
    /// matrices are fine.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let d = self.dim();
        let a = &self.entries;
        let mut l = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut den = a[(k, k)];
            for j in 0..k {
                den -= l[(k, j)] * l[(k, j)];
            }
            if den <= 1e-12 {
                continue;
            }
            let lkk = den.sqrt();
            l[(k, k)] = lkk;
            for i in (k + 1)..d {
                let mut s = a[(i, k)];
                for j in 0..k {
                    s -= l[(i, j)] * l[(k, j)];
                }
                l[(i, k)] = s / lkk;
            }
        }
        l
    }

    /// Groups of indices connected through non-zero correlations. Components
    /// are sorted by their smallest index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        let mut label = vec![usize::MAX; d];
        let mut out = Vec::new();
        for start in 0..d {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let i = members[head];
                head += 1;
                for j in 0..d {
                    if label[j] == usize::MAX && self.entries[(i, j)] != 0.0 {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

fn check_shape(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Err(Error::EmptyModelSet);
    }
    if m.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "correlation matrix columns",
            expected: d,
            found: m.ncols(),
        });
    }
    for i in 0..d {
        let v = m[(i, i)];
        if !((v - 1.0).abs() <= DIAGONAL_TOL) {
            return Err(Error::ParameterOutOfRange(format!(
                "diagonal entry {i} of a correlation matrix is {v}"
            )));
        }
        m[(i, i)] = 1.0;
        for j in (i + 1)..d {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() || !b.is_finite() || (a - b).abs() > SYMMETRY_TOL {
                return Err(Error::ParameterOutOfRange(format!(
                    "correlation matrix not symmetric at ({i}, {j})"
                )));
            }
            if a.abs() > 1.0 + DIAGONAL_TOL {
                return Err(Error::ParameterOutOfRange(format!(
                    "correlation {a} at ({i}, {j}) outside [-1, 1]"
                )));
            }
            let v = (0.5 * (a + b)).clamp(-1.0, 1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn clip_and_normalize(eig: SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let d = m.nrows();
    let scale: Vec<f64> = (0..d)
        .map(|i| {
            let s = m[(i, i)];
            if s > 0.0 {
                1.0 / s.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = if i == j {
                1.0
            } else {
                (m[(i, j)] * scale[i] * scale[j]).clamp(-1.0, 1.0)
            };
        }
    }
    // Restore exact symmetry.
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_singular_psd() {
        let ones = DMatrix::from_element(3, 3, 1.0);
        let r = CorrelationMatrix::new(ones.clone()).unwrap();
        assert_eq!(r.entries(), &ones);
    }

    #[test]
    fn rejects_indefinite() {
        // Three variables pairwise correlated at -0.9 is impossible.
        let m = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.9 });
        let err = CorrelationMatrix::new(m.clone()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
        let (p, changed) = CorrelationMatrix::project(m).unwrap();
        assert!(changed);
        let eig = SymmetricEigen::new(p.entries().clone());
        assert!(eig.eigenvalues.min() > -1e-12);
        for i in 0..3 {
            assert_eq!(p.get(i, i), 1.0);
        }
    }

    #[test]
    fn repairs_rounding_noise() {
        // Perfect correlation perturbed by a rounding-level negative eigenvalue.
        let mut m = DMatrix::from_element(2, 2, 1.0);
        m[(0, 1)] = 1.0 + 1e-12;
        m[(1, 0)] = 1.0 + 1e-12;
        let r = CorrelationMatrix::new(m).unwrap();
        assert!(r.get(0, 1) <= 1.0);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(CorrelationMatrix::new(DMatrix::from_element(2, 2, 0.5)).is_err());
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.3;
        assert!(CorrelationMatrix::new(m).is_err());
    }

    #[test]
    fn components_follow_nonzero_pattern() {
        let mut m = DMatrix::identity(5, 5);
        for (i, j) in [(0, 3), (3, 4)] {
            m[(i, j)] = 0.4;
            m[(j, i)] = 0.4;
        }
        let r = CorrelationMatrix::new(m).unwrap();
        assert_eq!(r.components(), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }

    #[test]
    fn semidefinite_cholesky() {
        let r = CorrelationMatrix::new(DMatrix::from_fn(3, 3, |i, j| {
            if i == j || i + j == 1 {
                1.0
            } else {
                0.3
            }
        }))
        .unwrap();
        let l = r.cholesky_factor();
        assert_eq!(l[(1, 1)], 0.0);
        assert!((&l * l.transpose() - r.entries()).abs().max() < 1e-12);
    }

    #[test]
    fn structured_constructors() {
        let r = CorrelationMatrix::ar1(4, 0.5).unwrap();
        assert_eq!(r.get(0, 3), 0.125);
        let e = CorrelationMatrix::equicorrelation(3, 0.2).unwrap();
        assert_eq!(e.get(2, 1), 0.2);
    }
}
