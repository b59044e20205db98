//! Thurstone preference model: the standard normal CDF, its inverse, and the
//! global labelling loss.

use crate::error::{Error, Result};
use crate::model::PreferenceDataset;
use crate::tree::FeatureCounts;

/// Standard normal cumulative distribution.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Rational initializer coefficients (relative error ~1.2e-9 before refinement).
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758276161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

fn inverse_initial(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse standard normal CDF. Fails for `p` outside the open unit interval.
pub fn inv_std_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = inverse_initial(p);
    // Halley refinement against the CDF; one step is normally enough.
    for _ in 0..3 {
        let err = std_normal_cdf(x) - p;
        let u = err / std_normal_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Mean fitness of two trajectories and the variance of their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFitnessPair {
    pub mu_i: f64,
    pub mu_j: f64,
    pub var_diff: f64,
}

/// Probability that trajectory `i` is preferred over `j`.
pub fn preference_prob(pair: GaussianFitnessPair) -> Result<f64> {
    let diff = pair.mu_i - pair.mu_j;
    if pair.var_diff <= 0.0 {
        if diff == 0.0 {
            return Ok(0.5);
        }
        return Err(Error::DegenerateVariance(diff));
    }
    Ok(std_normal_cdf(diff / pair.var_diff.sqrt()))
}

/// Squared error between each label's probit and the variance-scaled
/// predicted fitness difference, summed over rows. The variance of a
/// difference is floored at `variance_floor`.
///
/// `means` and `variances` are indexed by leaf; `counts` must hold a column
/// for every trajectory referenced by `dataset`.
pub fn labelling_loss(
    dataset: &PreferenceDataset,
    counts: &FeatureCounts,
    means: &[f64],
    variances: &[f64],
    variance_floor: f64,
) -> f64 {
    let mut loss = 0.0;
    for row in dataset.rows() {
        let ni = counts.column(row.i).expect("column for labelled trajectory");
        let nj = counts.column(row.j).expect("column for labelled trajectory");
        let mut num = 0.0;
        let mut var = 0.0;
        for x in 0..means.len() {
            let delta = ni[x] as f64 - nj[x] as f64;
            num += means[x] * delta;
            var += delta * delta * variances[x];
        }
        let scaled = num / var.max(variance_floor).sqrt();
        let target = inv_std_normal_cdf(row.y).expect("stored labels are epsilon-bounded");
        loss += (target - scaled).powi(2);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::FeatureCounts;

    /// Taylor series for erf, summed to machine precision; accurate for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn cdf_oracle(z: f64) -> f64 {
        0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2))
    }

    #[test]
    fn cdf_matches_series_oracle() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        for k in -40..=40 {
            let z = k as f64 * 0.1;
            assert!((std_normal_cdf(z) - cdf_oracle(z)).abs() < 1e-12, "z = {z}");
        }
        let z = 0.73;
        assert!((std_normal_cdf(-z) + std_normal_cdf(z) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_against_bisection() {
        let bisect = |p: f64| {
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf_oracle(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert_eq!(inv_std_normal_cdf(0.5).unwrap(), 0.0);
        let q = inv_std_normal_cdf(0.975).unwrap();
        assert!((q - bisect(0.975)).abs() < 1e-9);
        assert!((q - 1.959_963_984_540_054).abs() < 1e-9);
        let back = inv_std_normal_cdf(std_normal_cdf(1.2345)).unwrap();
        assert!((back - 1.2345).abs() < 1e-8);
    }

    #[test]
    fn inverse_residual_bound_across_regions() {
        for &p in &[1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.7, 0.9, 0.97575, 0.999, 1.0 - 1e-9] {
            let x = inv_std_normal_cdf(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-10, "p = {p}");
        }
    }

    #[test]
    fn inverse_domain_errors() {
        assert!(inv_std_normal_cdf(0.0).is_err());
        assert!(inv_std_normal_cdf(1.0).is_err());
        assert!(inv_std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn preference_prob_cases() {
        let p = |mu_i, mu_j, var_diff| preference_prob(GaussianFitnessPair { mu_i, mu_j, var_diff });
        assert_eq!(p(2.0, 2.0, 3.0).unwrap(), 0.5);
        assert_eq!(p(2.0, 2.0, 0.0).unwrap(), 0.5);
        assert!((p(1.0, 0.0, 1.0).unwrap() - cdf_oracle(1.0)).abs() < 1e-12);
        assert!((p(0.3, -0.4, 2.0).unwrap() + p(-0.4, 0.3, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(p(1.0, 0.0, 0.0), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn single_leaf_loss_is_squared_probit() {
        let mut ds = PreferenceDataset::new(0.1);
        ds.push(0, 1, 0.8413).unwrap();
        let counts = FeatureCounts::from_columns(1, vec![(0, vec![5]), (1, vec![5])]);
        let loss = labelling_loss(&ds, &counts, &[0.7], &[0.2], 1e-8);
        let expected = inv_std_normal_cdf(0.8413).unwrap().powi(2);
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_fit_has_zero_loss_and_duplicates_double() {
        // Two leaves; trajectory 0 entirely in leaf 0, trajectory 1 in leaf 1.
        let counts = FeatureCounts::from_columns(2, vec![(0, vec![4, 0]), (1, vec![0, 4])]);
        let (means, vars) = ([0.25, 0.0], [0.5, 0.5]);
        // scaled difference = 1 / sqrt(16) = 0.25.
        let y = std_normal_cdf(0.25);
        let mut ds = PreferenceDataset::new(0.1);
        ds.push(0, 1, y).unwrap();
        assert!(labelling_loss(&ds, &counts, &means, &vars, 1e-8) < 1e-20);

        let mut ds = PreferenceDataset::new(0.1);
        ds.push(0, 1, 0.7).unwrap();
        let single = labelling_loss(&ds, &counts, &means, &vars, 1e-8);
        // Re-oriented duplicate of the same comparison doubles the loss.
        let counts3 = FeatureCounts::from_columns(
            2,
            vec![(0, vec![4, 0]), (1, vec![0, 4]), (2, vec![4, 0]), (3, vec![0, 4])],
        );
        ds.push(2, 3, 0.7).unwrap();
        let doubled = labelling_loss(&ds, &counts3, &means, &vars, 1e-8);
        assert!((doubled - 2.0 * single).abs() < 1e-12);
    }
}
