//! Separation-of-variables integration of multivariate normal orthant
//! probabilities `P(Z_1 <= c, ..., Z_d <= c)` with a randomized
//! Richtmyer lattice rule.
//!
//! The correlation matrix is split into connected components; components of
//! size one and two are evaluated in closed form / with the bivariate
//! routine, larger ones by quasi-Monte-Carlo. The randomization shifts are
//! drawn once per integrator so that repeated evaluations at different `c`
//! share their points.

use std::sync::OnceLock;

use rand::Rng;

use super::bvn::bvn_cdf;
use super::correlation::CorrelationMatrix;
use super::normal::{norm_cdf, norm_pdf, phi_fast, phi_inv_fast};
use crate::rng::seeded;

/// Residual conditional variances below this are treated as zero.
const SINGULAR_TOL: f64 = 1e-10;
/// Multiplier turning the shift-to-shift standard error into an error bound.
const ERROR_FACTOR: f64 = 3.0;
/// Lattice points evaluated side by side.
const LANES: usize = 8;

fn richtmyer_generators() -> &'static [f64] {
    static GEN: OnceLock<Vec<f64>> = OnceLock::new();
    GEN.get_or_init(|| {
        let limit = 8_000;
        let mut sieve = vec![true; limit];
        sieve[0] = false;
        sieve[1] = false;
        let mut i = 2;
        while i * i < limit {
            if sieve[i] {
                let mut j = i * i;
                while j < limit {
                    sieve[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        sieve
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(p, _)| (p as f64).sqrt().fract())
            .collect()
    })
}

/// Lower-triangular factor with variable order chosen for the limit `c_ref`.
#[derive(Debug, Clone)]
struct GenzFactor {
    dim: usize,
    /// Row-major lower triangle, `dim * dim`.
    chol: Vec<f64>,
}

impl GenzFactor {
    /// Cholesky factorization with Genz-Bretz variable prioritization: at each
    /// step the variable with the smallest conditional probability of staying
    /// below `c_ref` goes next. Zero residual variances (singular matrices)
    /// produce zero columns.
    fn new(r: &CorrelationMatrix, c_ref: f64) -> Self {
        let d = r.dim();
        let mut a: Vec<f64> = (0..d * d).map(|k| r.get(k / d, k % d)).collect();
        let mut l = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        for k in 0..d {
            let mut best = k;
            let mut best_val = f64::INFINITY;
            for i in k..d {
                let mut den = a[i * d + i];
                let mut shift = 0.0;
                for j in 0..k {
                    den -= l[i * d + j] * l[i * d + j];
                    shift += l[i * d + j] * y[j];
                }
                let val = if den > SINGULAR_TOL {
                    norm_cdf((c_ref - shift) / den.sqrt())
                } else if c_ref - shift >= 0.0 {
                    1.0
                } else {
                    0.0
                };
                if val < best_val {
                    best_val = val;
                    best = i;
                }
            }
            if best != k {
                for j in 0..d {
                    a.swap(k * d + j, best * d + j);
                }
                for i in 0..d {
                    a.swap(i * d + k, i * d + best);
                }
                for j in 0..k {
                    l.swap(k * d + j, best * d + j);
                }
            }
            let mut den = a[k * d + k];
            let mut shift = 0.0;
            for j in 0..k {
                den -= l[k * d + j] * l[k * d + j];
                shift += l[k * d + j] * y[j];
            }
            if den > SINGULAR_TOL {
                let lkk = den.sqrt();
                l[k * d + k] = lkk;
                for i in (k + 1)..d {
                    let mut s = a[i * d + k];
                    for j in 0..k {
                        s -= l[i * d + j] * l[k * d + j];
                    }
                    l[i * d + k] = s / lkk;
                }
                let b = (c_ref - shift) / lkk;
                let pb = norm_cdf(b);
                y[k] = if pb > 1e-300 { -norm_pdf(b) / pb } else { b };
            } else {
                l[k * d + k] = 0.0;
                y[k] = 0.0;
            }
        }
        GenzFactor { dim: d, chol: l }
    }

    /// Integrand at `LANES` lattice points at once; `w` holds the points
    /// coordinate-major (`w[j * LANES + lane]`). Interleaving the points keeps
    /// the dependent chain of quantile and distribution calls from stalling.
    #[inline]
    fn integrand_block(&self, c: f64, w: &[f64], z: &mut [f64]) -> f64 {
        let d = self.dim;
        let l = &self.chol;
        let e0 = phi_fast(c / l[0]);
        let mut e = [e0; LANES];
        let mut f = [e0; LANES];
        for k in 1..d {
            let wk = &w[(k - 1) * LANES..k * LANES];
            for lane in 0..LANES {
                let u = (wk[lane] * e[lane]).clamp(1e-300, 1.0 - 1e-16);
                z[(k - 1) * LANES + lane] = phi_inv_fast(u);
            }
            let row = &l[k * d..k * d + k];
            let mut s = [0.0; LANES];
            for (j, &a) in row.iter().enumerate() {
                let zj = &z[j * LANES..(j + 1) * LANES];
                for lane in 0..LANES {
                    s[lane] += a * zj[lane];
                }
            }
            let lkk = l[k * d + k];
            for lane in 0..LANES {
                e[lane] = if lkk > 0.0 {
                    phi_fast((c - s[lane]) / lkk)
                } else if c - s[lane] >= 0.0 {
                    1.0
                } else {
                    0.0
                };
                f[lane] *= e[lane];
            }
        }
        f.iter().sum()
    }

    /// Mean of the integrand over the first `n` periodized lattice points
    /// under one random shift. `n` must be a multiple of `LANES`.
    fn lattice_mean(&self, c: f64, n: usize, shift: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let gens = richtmyer_generators();
        let m = self.dim - 1;
        scratch.resize(2 * m * LANES, 0.0);
        let (w, z) = scratch.split_at_mut(m * LANES);
        let mut acc = 0.0;
        for block in 0..n / LANES {
            for lane in 0..LANES {
                let kf = (block * LANES + lane + 1) as f64;
                for j in 0..m {
                    let x = (kf * gens[j] + shift[j]).fract();
                    w[j * LANES + lane] = (2.0 * x - 1.0).abs();
                }
            }
            acc += self.integrand_block(c, w, z);
        }
        acc / n as f64
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Single,
    Pair(f64),
    Lattice {
        factor: GenzFactor,
        shifts: Vec<Vec<f64>>,
    },
}

/// Value and absolute error estimate of an orthant probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct OrthantIntegrator {
    factors: Vec<Factor>,
    n_shifts: usize,
    singletons: usize,
}

impl OrthantIntegrator {
    pub fn new(r: &CorrelationMatrix, c_ref: f64, n_shifts: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut factors = Vec::new();
        let mut singletons = 0;
        for comp in r.components() {
            match comp.len() {
                1 => {
                    singletons += 1;
                    factors.push(Factor::Single);
                }
                2 => factors.push(Factor::Pair(r.get(comp[0], comp[1]))),
                k => {
                    let factor = GenzFactor::new(&r.submatrix(&comp), c_ref);
                    let shifts = (0..n_shifts)
                        .map(|_| (0..k - 1).map(|_| rng.random::<f64>()).collect())
                        .collect();
                    factors.push(Factor::Lattice { factor, shifts });
                }
            }
        }
        OrthantIntegrator {
            factors,
            n_shifts,
            singletons,
        }
    }

    /// True if no component needs lattice integration.
    pub fn is_exact(&self) -> bool {
        !self
            .factors
            .iter()
            .any(|f| matches!(f, Factor::Lattice { .. }))
    }

    /// True if all variables are uncorrelated.
    pub fn is_independent(&self) -> bool {
        self.singletons == self.factors.len()
    }

    pub fn dim_independent(&self) -> usize {
        self.singletons
    }

    /// Probability estimate using `n_points` lattice points per shift.
    pub fn estimate(&self, c: f64, n_points: usize) -> Estimate {
        let mut exact = 1.0;
        let mut per_shift = vec![1.0; self.n_shifts];
        let mut any_lattice = false;
        let mut scratch = Vec::new();
        for f in &self.factors {
            match f {
                Factor::Single => exact *= norm_cdf(c),
                Factor::Pair(rho) => exact *= bvn_cdf(c, c, *rho),
                Factor::Lattice { factor, shifts } => {
                    any_lattice = true;
                    for (ps, shift) in per_shift.iter_mut().zip(shifts) {
                        *ps *= factor.lattice_mean(c, n_points, shift, &mut scratch);
                    }
                }
            }
        }
        if !any_lattice {
            return Estimate {
                value: exact,
                error: 0.0,
            };
        }
        let m = self.n_shifts as f64;
        let mean = per_shift.iter().sum::<f64>() / m;
        let var = per_shift.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Estimate {
            value: exact * mean,
            error: exact * ERROR_FACTOR * (var / m).sqrt(),
        }
    }
}
