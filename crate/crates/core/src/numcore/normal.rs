//! Standard normal CDF and quantile, plus the exact binomial (Clopper-Pearson)
//! limits built on the regularized incomplete beta function.

use statrs::function::beta::beta_reg;
use libm::erfc;

/// Inputs to [`normal_quantile`] are clamped to this interval.
pub const QUANTILE_CLAMP: f64 = 1e-12;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
///
/// Acklam's rational approximation followed by one Halley correction against
/// [`normal_cdf`]. Inputs are clamped to `[1e-12, 1 - 1e-12]`.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p = p.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    let low = 0.024_25;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley step; the upper tail is refined through the complement to keep precision.
    let e = if x > 0.0 {
        (1.0 - p) - 0.5 * erfc(x / std::f64::consts::SQRT_2)
    } else {
        normal_cdf(x) - p
    };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Quantile of `Beta(a, b)` by bisection on the regularized incomplete beta.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One-sided lower Clopper-Pearson limit for `k` successes in `n` trials.
pub fn clopper_pearson_lower(k: usize, n: usize, alpha: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        beta_quantile(alpha, k as f64, (n - k + 1) as f64)
    }
}

/// One-sided upper Clopper-Pearson limit for `k` successes in `n` trials.
pub fn clopper_pearson_upper(k: usize, n: usize, alpha: f64) -> f64 {
    if k >= n {
        1.0
    } else {
        beta_quantile(1.0 - alpha, (k + 1) as f64, (n - k) as f64)
    }
}

/// Two-sided Clopper-Pearson interval at confidence `1 - alpha`.
pub fn clopper_pearson_interval(k: usize, n: usize, alpha: f64) -> (f64, f64) {
    (
        clopper_pearson_lower(k, n, alpha / 2.0),
        clopper_pearson_upper(k, n, alpha / 2.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of the CDF, summed in extended terms; accurate on |x| <= 3.
    fn cdf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-20 {
            n += 1.0;
            term *= -x * x / (2.0 * n);
            sum += term / (2.0 * n + 1.0);
        }
        0.5 + sum / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn cdf_matches_series_oracle() {
        for i in -30..=30 {
            let x = i as f64 * 0.1;
            assert!((normal_cdf(x) - cdf_series(x)).abs() < 1e-12, "x = {x}");
        }
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf_on_wide_range() {
        for i in -800..=800 {
            let x = i as f64 * 0.01;
            let p = normal_cdf(x);
            if !(QUANTILE_CLAMP..=1.0 - QUANTILE_CLAMP).contains(&p) {
                continue;
            }
            let back = normal_quantile(p);
            // In the upper tail p carries only absolute precision eps, which
            // maps to eps / phi(x) in x.
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let tol = 1e-9 + 4.0 * f64::EPSILON / phi;
            assert!((back - x).abs() < tol, "x = {x}, back = {back}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
        assert_eq!(normal_quantile(0.0), normal_quantile(QUANTILE_CLAMP));
        assert_eq!(normal_quantile(1.0), normal_quantile(1.0 - QUANTILE_CLAMP));
    }

    #[test]
    fn clopper_pearson_matches_reference_table() {
        // binom.test(27, 30) in R: 0.7347115 0.9788829
        let (lo, hi) = clopper_pearson_interval(27, 30, 0.05);
        assert!((lo - 0.734_711_5).abs() < 1e-6, "{lo}");
        assert!((hi - 0.978_882_9).abs() < 1e-6, "{hi}");
        // Closed forms at the edges: (alpha/2)^(1/n) and 1-(alpha/2)^(1/n).
        let (lo, hi) = clopper_pearson_interval(30, 30, 0.05);
        assert!((lo - 0.025f64.powf(1.0 / 30.0)).abs() < 1e-12);
        assert_eq!(hi, 1.0);
        let (lo, hi) = clopper_pearson_interval(0, 30, 0.05);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(1.0 / 30.0))).abs() < 1e-12);
    }
}
