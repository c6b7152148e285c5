//! Multivariate normal orthant probabilities and equicoordinate quantiles.

mod bvn;
mod correlation;
mod genz;
mod normal;

pub use bvn::{bvn_cdf, bvn_upper};
pub use correlation::{CorrelationMatrix, PSD_FAIL_BOUND};
pub use genz::{Estimate, OrthantIntegrator};
pub use normal::{norm_cdf, norm_pdf, norm_quantile};

use crate::error::{Error, Result};

/// Default absolute tolerance of [`mvn_orthant_cdf`].
pub const DEFAULT_CDF_TOL: f64 = 1e-4;
/// Default probability tolerance of [`equicoordinate_quantile`].
pub const DEFAULT_QUANTILE_TOL: f64 = 1e-3;

const N_SHIFTS: usize = 10;
const INITIAL_POINTS: usize = 256;
const MAX_POINTS: usize = 1 << 17;

/// `P(Z_1 <= c, ..., Z_S <= c)` for `Z ~ N(0, r)`.
pub fn mvn_orthant_cdf(c: f64, r: &CorrelationMatrix, tol: f64, seed: u64) -> Result<Estimate> {
    check_tol(tol)?;
    let integ = OrthantIntegrator::new(r, c, N_SHIFTS, seed);
    let mut n = INITIAL_POINTS;
    loop {
        let est = integ.estimate(c, n);
        if est.error <= tol {
            return Ok(est);
        }
        if n >= MAX_POINTS {
            return Err(Error::NonConvergence {
                error: est.error,
                tol,
            });
        }
        n *= 2;
    }
}

/// Critical value `c` with `P(max_m Z_m <= c) = p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    pub c: f64,
    /// Error estimate of the orthant probability at `c`.
    pub error: f64,
}

/// Equicoordinate quantile of `N(0, r)`: the `c` whose orthant probability
/// equals `p` within `tol`.
///
/// The root lies between the perfect-correlation value `Phi^-1(p)` and the
/// Bonferroni value `Phi^-1(1 - (1 - p) / S)`. It is located by a secant
/// search started at the Sidak value and safeguarded by Illinois steps once
/// bracketed, evaluating all candidates on the same lattice points. The point
/// count doubles, restarting the search at the previous root, until the error
/// estimate at the root is within `tol`. Ties resolve to the larger `c`.
pub fn equicoordinate_quantile(
    r: &CorrelationMatrix,
    p: f64,
    tol: f64,
    seed: u64,
) -> Result<Quantile> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ParameterOutOfRange(format!(
            "quantile probability {p} must lie in (0, 1)"
        )));
    }
    check_tol(tol)?;
    let s = r.dim();
    let lo = norm_quantile(p);
    if s == 1 {
        return Ok(Quantile { c: lo, error: 0.0 });
    }
    let sidak = norm_quantile(p.powf(1.0 / s as f64));
    let integ = OrthantIntegrator::new(r, sidak, N_SHIFTS, seed);
    if integ.is_independent() {
        return Ok(Quantile {
            c: sidak,
            error: 0.0,
        });
    }
    let hi = norm_quantile(1.0 - (1.0 - p) / s as f64);

    let mut n = INITIAL_POINTS;
    let mut guess = sidak.clamp(lo, hi);
    let mut step = 0.1;
    // Exact components leave only rounding error in the root.
    let accept = if integ.is_exact() { 1e-14 } else { tol / 50.0 };
    loop {
        let (c, est) = find_root(|c| integ.estimate(c, n), p, lo, hi, guess, step, accept);
        if est.error <= tol {
            return Ok(Quantile {
                c,
                error: est.error,
            });
        }
        if n >= MAX_POINTS {
            return Err(Error::NonConvergence {
                error: est.error,
                tol,
            });
        }
        n *= 2;
        guess = c;
        step = 0.02;
    }
}

/// Root of the increasing function `f(c) = p` on `[lo, hi]`, starting from
/// `guess`. Returns a point with `f >= p` whose value exceeds `p` by at most
/// `accept`, or the upper end of a bracket narrower than rounding.
fn find_root<F: FnMut(f64) -> Estimate>(
    mut f: F,
    p: f64,
    lo: f64,
    hi: f64,
    guess: f64,
    step: f64,
    accept: f64,
) -> (f64, Estimate) {
    let eg = f(guess);
    let fg = eg.value - p;
    if (0.0..=accept).contains(&fg) {
        return (guess, eg);
    }
    // Secant steps from the guess until the root is bracketed.
    let (mut x0, mut f0, mut e0) = (guess, fg, eg);
    let mut x1 = if fg > 0.0 { guess - step } else { guess + step }.clamp(lo, hi);
    let (mut a, fa, mut b, mut fb, mut eb);
    loop {
        let e1 = f(x1);
        let f1 = e1.value - p;
        if (0.0..=accept).contains(&f1) {
            return (x1, e1);
        }
        if (f1 > 0.0) != (f0 > 0.0) {
            if f1 > 0.0 {
                (a, fa, b, fb, eb) = (x0, f0, x1, f1, e1);
            } else {
                (a, fa, b, fb, eb) = (x1, f1, x0, f0, e0);
            }
            break;
        }
        if f1 <= 0.0 && x1 >= hi {
            return (x1, e1);
        }
        if f1 > 0.0 && x1 <= lo {
            return (x1, e1);
        }
        let dir = if f1 > 0.0 { -1.0 } else { 1.0 };
        let max_move = 4.0 * (x1 - x0).abs().max(step);
        let secant = if f1 != f0 {
            x1 - f1 * (x1 - x0) / (f1 - f0)
        } else {
            f64::NAN
        };
        let mut next = if secant.is_finite() && (secant - x1) * dir > 0.0 {
            x1 + (secant - x1).clamp(-max_move, max_move)
        } else {
            x1 + dir * max_move
        };
        // Overshoot slightly so the next point tends to land on the far side.
        next += dir * 1e-3 * (next - x1).abs();
        (x0, f0, e0) = (x1, f1, e1);
        x1 = next.clamp(lo, hi);
    }
    // Illinois iterations inside the bracket; `ga`, `gb` are the damped values.
    let (mut ga, mut gb) = (fa, fb);
    let mut side = 0i8;
    for _ in 0..200 {
        if fb <= accept || b - a <= 1e-12 * (1.0 + b.abs()) {
            break;
        }
        let c = b - gb * (b - a) / (gb - ga);
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let ec = f(c);
        let fc = ec.value - p;
        if fc >= 0.0 {
            (b, fb, gb, eb) = (c, fc, fc, ec);
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            (a, ga) = (c, fc);
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    (b, eb)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange(format!(
            "tolerance {tol} must be positive"
        )))
    }
}
