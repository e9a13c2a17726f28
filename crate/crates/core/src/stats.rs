//! Small statistical helpers shared by the audit and experiment modules.

/// 95% Wilson score interval for a binomial proportion.
///
/// Returns `(lo, hi)` with `0 <= lo <= hi <= 1`. For `trials = 0` the
/// interval is the uninformative `(0, 1)`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    wilson_interval_z(successes, trials, 1.959963984540054)
}

/// Wilson score interval at an arbitrary normal quantile `z`.
pub fn wilson_interval_z(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // the endpoints are exact at degenerate counts; don't let rounding in
    // the center/half cancellation leak past them
    let lo = if successes == 0 { 0.0 } else { ((center - half) / denom).clamp(0.0, 1.0) };
    let hi = if successes == trials { 1.0 } else { ((center + half) / denom).clamp(0.0, 1.0) };
    (lo, hi)
}

/// Mann-Kendall trend statistic for a numeric sequence.
///
/// `s` counts concordant minus discordant pairs; `z` is the normalized
/// statistic with the usual continuity correction. Positive `z` indicates an
/// increasing trend; `|z| > 1.645` rejects "no trend" one-sided at 5%.
pub struct TrendTest {
    pub s: i64,
    pub z: f64,
}

pub fn mann_kendall(values: &[f64]) -> TrendTest {
    let n = values.len();
    let mut s: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let var = (n as f64) * (n as f64 - 1.0) * (2.0 * n as f64 + 5.0) / 18.0;
    let z = if var <= 0.0 || s == 0 {
        0.0
    } else {
        (s as f64 - s.signum() as f64) / var.sqrt()
    };
    TrendTest { s, z }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xa: Vec<f64> = a.to_vec();
    let mut xb: Vec<f64> = b.to_vec();
    xa.sort_unstable_by(|p, q| p.total_cmp(q));
    xb.sort_unstable_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let t = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= t {
            i += 1;
        }
        while j < xb.len() && xb[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d.max(1.0 - (i as f64 / na).min(j as f64 / nb))
}

/// Least-squares line through `points`, returned as
/// `(slope, intercept, r2)`. A degenerate vertical spread (all x equal)
/// yields slope 0 through the mean; zero total variance yields r2 = 1.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_matches_hand_computation() {
        // successes=8, trials=10, z=1.96: textbook Wilson interval
        let (lo, hi) = wilson_interval(8, 10);
        assert_abs_diff_eq!(lo, 0.4901, epsilon = 5e-4);
        assert_abs_diff_eq!(hi, 0.9433, epsilon = 5e-4);
        let (lo0, hi0) = wilson_interval(0, 50);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.1);
        let (lo1, hi1) = wilson_interval(50, 50);
        assert!(lo1 > 0.9 && lo1 < 1.0);
        assert_eq!(hi1, 1.0);
    }

    #[test]
    fn mann_kendall_detects_monotone_sequences() {
        let up: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(mann_kendall(&up).z > 1.645);
        let down: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        assert!(mann_kendall(&down).z < -1.645);
        let flat = vec![1.0; 10];
        assert_eq!(mann_kendall(&flat).s, 0);
    }

    #[test]
    fn ks_statistic_on_disjoint_and_identical_samples() {
        let a = vec![0.0, 0.1, 0.2];
        let b = vec![1.0, 1.1, 1.2];
        assert_abs_diff_eq!(ks_statistic(&a, &b), 1.0);
        assert_abs_diff_eq!(ks_statistic(&a, &a), 0.0);
        // interleaved uniform grids: small distance
        let c: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let d: Vec<f64> = (0..100).map(|i| i as f64 / 100.0 + 0.005).collect();
        assert!(ks_statistic(&c, &d) <= 0.02);
    }

    #[test]
    fn ols_recovers_exact_lines() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        let (slope, intercept, r2) = ols(&pts);
        assert_abs_diff_eq!(slope, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-12);
        // symmetric residuals around a flat line
        let (s2, i2, r22) = ols(&[(0.0, 1.0), (1.0, 2.0), (2.0, 1.0)]);
        assert_abs_diff_eq!(s2, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(i2, 4.0 / 3.0, epsilon = 1e-12);
        assert!(r22 <= 0.0 + 1e-12);
    }
}
