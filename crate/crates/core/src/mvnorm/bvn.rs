//! Bivariate normal probabilities, after Drezner & Wesolowsky (1990) with
//! Genz's (2004) modifications for large correlations.

use std::f64::consts::PI;

use super::normal::norm_cdf;

const TWO_PI: f64 = 2.0 * PI;

// Gauss-Legendre half-rules (nodes on [-1, 0), weights) with 6, 12 and 20 points.
const GL_6: [(f64, f64); 3] = [
    (-0.932_469_514_203_152_2, 0.171_324_492_379_170_5),
    (-0.661_209_386_466_264_7, 0.360_761_573_048_138_4),
    (-0.238_619_186_083_197_0, 0.467_913_934_572_690_4),
];
const GL_12: [(f64, f64); 6] = [
    (-0.981_560_634_246_719_1, 0.047_175_336_386_511_77),
    (-0.904_117_256_370_475_0, 0.106_939_325_995_318_3),
    (-0.769_902_674_194_305_0, 0.160_078_328_543_346_4),
    (-0.587_317_954_286_617_1, 0.203_167_426_723_065_9),
    (-0.367_831_498_998_180_2, 0.233_492_536_538_354_7),
    (-0.125_233_408_511_469_2, 0.249_147_045_813_402_9),
];
const GL_20: [(f64, f64); 10] = [
    (-0.993_128_599_185_094_9, 0.017_614_007_139_152_12),
    (-0.963_971_927_277_913_8, 0.040_601_429_800_386_94),
    (-0.912_234_428_251_325_9, 0.062_672_048_334_109_06),
    (-0.839_116_971_822_218_8, 0.083_276_741_576_704_75),
    (-0.746_331_906_460_150_8, 0.101_930_119_817_240_4),
    (-0.636_053_680_726_515_0, 0.118_194_531_961_518_4),
    (-0.510_867_001_950_827_1, 0.131_688_638_449_176_6),
    (-0.373_706_088_715_419_6, 0.142_096_109_318_382_1),
    (-0.227_785_851_141_645_1, 0.149_172_986_472_603_7),
    (-0.076_526_521_133_497_33, 0.152_753_387_130_725_9),
];

/// `P(X > h, Y > k)` for standard normals with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let r = r.clamp(-1.0, 1.0);
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return norm_cdf(-k);
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }

    let rule: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL_6
    } else if r.abs() < 0.75 {
        &GL_12
    } else {
        &GL_20
    };

    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for &(x, w) in rule {
            let sn = (asr * (x + 1.0) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (-x + 1.0) / 2.0).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * TWO_PI) + norm_cdf(-h) * norm_cdf(-k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / a_s + hk) / 2.0).exp()
            * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * TWO_PI.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(x, w) in rule {
            let xs = (a * (x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w
                * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                    - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            let xs = a_s * (-x + 1.0).powi(2) / 4.0;
            let rs = (1.0 - xs).sqrt();
            bvn += a
                * w
                * (-(bs / xs + hk) / 2.0).exp()
                * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                    - (1.0 + c * xs * (1.0 + d * xs)));
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn += norm_cdf(-h.max(k));
    } else {
        bvn = -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0);
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X <= h, Y <= k)` for standard normals with correlation `r`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

#[cfg(test)]
mod tests {
    use super::super::normal::norm_pdf;
    use super::*;

    // Gauss-Legendre half rules must integrate polynomials of degree < 2n exactly.
    #[test]
    fn quadrature_tables_are_exact() {
        for rule in [&GL_6[..], &GL_12[..], &GL_20[..]] {
            let n = 2 * rule.len();
            for deg in 0..(2 * n) {
                let approx: f64 = rule
                    .iter()
                    .map(|&(x, w)| w * (x.powi(deg as i32) + (-x).powi(deg as i32)))
                    .sum();
                let exact = if deg % 2 == 0 {
                    2.0 / (deg as f64 + 1.0)
                } else {
                    0.0
                };
                assert!((approx - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    /// P(X <= h, Y <= k) = int_{-inf}^h phi(x) Phi((k - r x) / sqrt(1 - r^2)) dx,
    /// by composite Simpson on [-12, h].
    fn oracle_cdf(h: f64, k: f64, r: f64) -> f64 {
        let lo = -12.0;
        let m = 40_000;
        let step = (h - lo) / m as f64;
        let s = (1.0 - r * r).sqrt();
        let f = |x: f64| norm_pdf(x) * norm_cdf((k - r * x) / s);
        let mut acc = f(lo) + f(h);
        for i in 1..m {
            let x = lo + i as f64 * step;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * step / 3.0
    }

    #[test]
    fn orthant_closed_form() {
        for &r in &[-0.99, -0.9, -0.5, -0.2, 0.0, 0.1, 0.5, 0.8, 0.93, 0.99] {
            let exact = 0.25 + f64::asin(r) / (2.0 * PI);
            assert!((bvn_cdf(0.0, 0.0, r) - exact).abs() < 1e-14, "r={r}");
        }
    }

    #[test]
    fn matches_quadrature_oracle() {
        let pts = [-2.5, -1.0, -0.3, 0.0, 0.7, 1.5, 2.8];
        let rhos = [-0.95, -0.6, -0.1, 0.2, 0.5, 0.85, 0.97];
        for &h in &pts {
            for &k in &pts {
                for &r in &rhos {
                    let got = bvn_cdf(h, k, r);
                    let want = oracle_cdf(h, k, r);
                    assert!((got - want).abs() < 1e-10, "h={h} k={k} r={r}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn degenerate_correlations() {
        assert!((bvn_cdf(0.5, 1.0, 1.0) - norm_cdf(0.5)).abs() < 1e-15);
        assert!((bvn_cdf(0.5, 1.0, -1.0) - (norm_cdf(0.5) + norm_cdf(1.0) - 1.0)).abs() < 1e-15);
        assert!((bvn_cdf(0.5, 1.0, 0.0) - norm_cdf(0.5) * norm_cdf(1.0)).abs() < 1e-15);
        assert_eq!(bvn_cdf(-1.0, -1.0, -1.0), 0.0);
    }
}
