//! Two-sample significance testing for paired evaluation runs.
//!
//! The test is a pooled-variance two-sample t-test (equal variances
//! assumed, df = n_a + n_b - 2), matching how small seed-replicate runs
//! are compared. The two-sided p-value comes from the regularized
//! incomplete beta function, computed here directly so results are
//! bit-stable across platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("both runs are constant and equal; the test statistic is undefined")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    /// mean_b - mean_a: positive when the second run is higher.
    pub diff: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pooled-variance two-sample t-test over raw per-seed scores.
///
/// Each run needs at least two observations. `diff` and `t` are signed
/// as run B minus run A.
pub fn ttest(run_a: &[f64], run_b: &[f64]) -> Result<TTestResult, StatsError> {
    assert!(
        run_a.len() >= 2 && run_b.len() >= 2,
        "each run needs at least 2 observations, got {} and {}",
        run_a.len(),
        run_b.len()
    );
    let (mean_a, std_a) = mean_and_std(run_a);
    let (mean_b, std_b) = mean_and_std(run_b);
    ttest_from_stats(mean_a, std_a, run_a.len(), mean_b, std_b, run_b.len())
}

/// Same test from summary statistics (sample standard deviations, n - 1).
pub fn ttest_from_stats(
    mean_a: f64,
    std_a: f64,
    n_a: usize,
    mean_b: f64,
    std_b: f64,
    n_b: usize,
) -> Result<TTestResult, StatsError> {
    assert!(
        n_a >= 2 && n_b >= 2,
        "each run needs at least 2 observations, got {n_a} and {n_b}"
    );
    assert!(
        std_a >= 0.0 && std_b >= 0.0,
        "standard deviations must be non-negative"
    );
    let df = n_a + n_b - 2;
    let pooled_var = ((n_a - 1) as f64 * std_a * std_a + (n_b - 1) as f64 * std_b * std_b)
        / df as f64;
    let se = (pooled_var * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let diff = mean_b - mean_a;
    let t = if se == 0.0 {
        if diff == 0.0 {
            return Err(StatsError::ZeroVariance);
        }
        diff.signum() * f64::INFINITY
    } else {
        diff / se
    };
    let p = if t.is_infinite() {
        0.0
    } else {
        student_t_two_sided_p(t, df)
    };
    Ok(TTestResult {
        mean_a,
        std_a,
        mean_b,
        std_b,
        diff,
        t,
        p,
        df,
    })
}

/// Two-sided p-value for a Student-t statistic:
/// p = I_{df/(df+t^2)}(df/2, 1/2).
pub fn student_t_two_sided_p(t: f64, df: usize) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    let df = df as f64;
    betai(df / 2.0, 0.5, df / (df + t * t))
}

/// ln |Gamma(x)| via the Lanczos approximation (g = 7, 9 terms), with the
/// reflection formula below 0.5. Accurate to ~1e-13 over the range used
/// here (positive half-integers and integers).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    // Published coefficient table, kept verbatim; some digits exceed f64.
    #[allow(clippy::excessive_precision)]
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAXIT: usize = 200;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAXIT {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn betai(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must lie in [0, 1], got {x}");
    if x == 0.0 || x == 1.0 {
        return x;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // Use the continued fraction on the side where it converges fast.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_matches_known_values() {
        assert!((ln_gamma(0.5) - 0.5723649429247001).abs() < 1e-13);
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(2.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(10.5) - 13.940625219403763).abs() < 1e-11);
    }

    #[test]
    fn p_values_match_t_table_quantiles() {
        // Critical values from the two-sided Student-t table.
        let rows = [
            (2.776, 4, 0.05),
            (4.604, 4, 0.01),
            (12.706, 1, 0.05),
            (2.228, 10, 0.05),
        ];
        for (t, df, alpha) in rows {
            let p = student_t_two_sided_p(t, df);
            assert!(
                (p - alpha).abs() < 5e-4,
                "t={t} df={df}: expected p near {alpha}, got {p}"
            );
        }
    }

    #[test]
    fn betai_endpoints_and_symmetry() {
        assert_eq!(betai(2.0, 0.5, 0.0), 0.0);
        assert_eq!(betai(2.0, 0.5, 1.0), 1.0);
        // I_x(a, b) = 1 - I_{1-x}(b, a)
        let x = 0.37;
        assert!((betai(2.0, 3.0, x) - (1.0 - betai(3.0, 2.0, 1.0 - x))).abs() < 1e-12);
        // I_x(1, 1) is the identity.
        assert!((betai(1.0, 1.0, 0.42) - 0.42).abs() < 1e-12);
    }

    #[test]
    fn reported_seed_runs_reproduce() {
        // Three-seed runs summarized as 50.90 +/- 0.18 vs 52.10 +/- 0.25.
        let result = ttest_from_stats(50.90, 0.18, 3, 52.10, 0.25, 3).unwrap();
        assert_eq!(result.df, 4);
        assert!((result.diff - 1.20).abs() < 1e-12);
        assert!((result.t - 6.746970).abs() < 1e-4, "t = {}", result.t);
        assert!((result.p - 0.002516).abs() < 1e-4, "p = {}", result.p);
    }

    #[test]
    fn raw_scores_agree_with_summary_stats() {
        let a = [50.72, 50.90, 51.08];
        let b = [51.85, 52.10, 52.35];
        let from_raw = ttest(&a, &b).unwrap();
        let (mean_a, std_a) = (from_raw.mean_a, from_raw.std_a);
        let (mean_b, std_b) = (from_raw.mean_b, from_raw.std_b);
        let from_stats = ttest_from_stats(mean_a, std_a, 3, mean_b, std_b, 3).unwrap();
        assert!((from_raw.t - from_stats.t).abs() < 1e-12);
        assert!((from_raw.p - from_stats.p).abs() < 1e-12);
        assert!((mean_a - 50.90).abs() < 1e-12);
        assert!((std_a - 0.18).abs() < 1e-3);
    }

    #[test]
    fn identical_runs_give_t_zero_p_one() {
        let result = ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(result.t, 0.0);
        assert!((result.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_constant_runs_are_degenerate() {
        assert!(matches!(
            ttest(&[2.0, 2.0, 2.0], &[2.0, 2.0, 2.0]),
            Err(StatsError::ZeroVariance)
        ));
    }

    #[test]
    fn unequal_constant_runs_are_infinitely_significant() {
        let result = ttest(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(result.t.is_infinite() && result.t > 0.0);
        assert_eq!(result.p, 0.0);
        let flipped = ttest(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(flipped.t.is_infinite() && flipped.t < 0.0);
    }

    #[test]
    fn swapping_runs_negates_t_and_keeps_p() {
        let a = [44.1, 44.6, 43.4];
        let b = [45.3, 45.6, 45.5];
        let forward = ttest(&a, &b).unwrap();
        let backward = ttest(&b, &a).unwrap();
        assert!((forward.t + backward.t).abs() < 1e-12);
        assert!((forward.p - backward.p).abs() < 1e-12);
        assert!(forward.diff > 0.0 && backward.diff < 0.0);
    }

    #[test]
    #[should_panic(expected = "at least 2 observations")]
    fn single_observation_runs_are_rejected() {
        let _ = ttest(&[1.0], &[2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn p_is_a_probability_and_shrinks_with_t(
            t in 0.0f64..50.0,
            df in 1usize..40
        ) {
            let p = student_t_two_sided_p(t, df);
            prop_assert!((0.0..=1.0).contains(&p));
            let p_further = student_t_two_sided_p(t + 1.0, df);
            prop_assert!(p_further <= p + 1e-12);
        }

        #[test]
        fn t_is_symmetric_in_sign(t in 0.0f64..30.0, df in 1usize..20) {
            let plus = student_t_two_sided_p(t, df);
            let minus = student_t_two_sided_p(-t, df);
            prop_assert!((plus - minus).abs() < 1e-12);
        }
    }
}
