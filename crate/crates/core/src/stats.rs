//! Small statistical helpers shared across the crate: sample moments,
//! binomial confidence bounds, least-squares line fits, and the standard
//! normal CDF.
//!
//! Everything here is deliberately plain: these routines back the
//! diagnostic reports, so they must be easy to audit against a textbook.

use statrs::function::erf;

/// Sample mean and the usual i.i.d. standard error `sd / sqrt(n)`.
///
/// Returns `(0.0, 0.0)` for an empty slice and `(x, 0.0)` for a singleton,
/// so callers can fold degenerate cases without special-casing.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Unbiased sample variance (denominator `n - 1`). Zero for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Wilson score interval for a binomial proportion.
///
/// Unlike the Wald interval this stays inside `[0, 1]` and behaves sensibly
/// at the extremes (`successes` equal to `0` or `trials`), which matters for
/// the coupling-tail reports where late tail probabilities are tiny.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Result of an ordinary least-squares line fit `y ~ intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination. A constant series fitted exactly
    /// reports `1.0` (zero residuals on zero total variance).
    pub r_squared: f64,
}

/// Least-squares line through `(xs[i], ys[i])`.
///
/// Returns `None` when fewer than two points are supplied or when all `x`
/// coincide (the slope would be undefined).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    if sxx <= f64::EPSILON * nf * (1.0 + mx * mx) {
        return None;
    }
    let sxy = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>();
    let ss_res = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>();
    // Zero total variance means the data were constant; the horizontal line
    // fits them exactly, so report a perfect fit rather than 0/0.
    let r_squared = if ss_tot <= 1e-300 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf::erf(z / std::f64::consts::SQRT_2))
}

/// Weighted median of `values` with nonnegative `weights` summing to ~1.
///
/// Defined as the smallest value whose cumulative weight reaches one half;
/// ties in position are merged by the sort.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len());
    assert!(!values.is_empty(), "weighted_median of empty sample");
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= 0.5 * total {
            return values[i];
        }
    }
    values[*idx.last().unwrap()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_matches_hand_computation() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // var = (2.25 + 0.25 + 0.25 + 2.25) / 3 = 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(80, 100, 1.96);
        assert!(lo < 0.8 && 0.8 < hi);
        assert!(lo > 0.70 && hi < 0.88);
        // Extremes stay inside [0, 1].
        let (lo0, _) = wilson_interval(0, 50, 1.96);
        let (_, hi1) = wilson_interval(50, 50, 1.96);
        assert_eq!(lo0, 0.0);
        assert_eq!(hi1, 1.0);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_constant_series_is_a_perfect_fit() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [4.0, 4.0, 4.0];
        let fit = linear_fit(&xs, &ys).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.96) - 0.975_002_104_85).abs() < 1e-9);
        assert!((std_normal_cdf(-1.0) - 0.158_655_253_93).abs() < 1e-9);
    }

    #[test]
    fn weighted_median_respects_weights() {
        let vals = [1.0, 2.0, 10.0];
        let w = [0.6, 0.3, 0.1];
        assert_eq!(weighted_median(&vals, &w), 1.0);
        let w2 = [0.2, 0.2, 0.6];
        assert_eq!(weighted_median(&vals, &w2), 10.0);
    }
}
