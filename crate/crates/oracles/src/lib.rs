//! Naive reference implementations and statistical test helpers.
//!
//! Nothing here depends on `conformal-ood`; the point is to check the main
//! implementation against code that shares none of its logic.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Linear-scan conformal p-value `(|{s >= test}| + 1) / (k + 1)`.
pub fn oracle_p_value(cal_scores: &[f64], test: f64) -> f64 {
    let mut count = 0usize;
    for s in cal_scores {
        if *s >= test {
            count += 1;
        }
    }
    (count + 1) as f64 / (cal_scores.len() + 1) as f64
}

/// All-pairs AUROC with half credit for ties. `None` on empty input.
pub fn oracle_auroc(id_p: &[f64], ood_p: &[f64]) -> Option<f64> {
    if id_p.is_empty() || ood_p.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for a in id_p {
        for b in ood_p {
            if b < a {
                credit += 1.0;
            } else if b == a {
                credit += 0.5;
            }
        }
    }
    Some(credit / (id_p.len() * ood_p.len()) as f64)
}

/// Quarter turn of a square row-major grid: `out[r][c] = in[n-1-c][r]`.
pub fn oracle_quarter_turn(grid: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = grid[(n - 1 - c) * n + r];
        }
    }
    out
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

pub fn chi_square_p_value(stat: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .cdf(stat)
}

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
pub fn ks_statistic_uniform(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = f64::from(j);
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u32 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Three-sigma binomial half-width for a proportion `p` estimated from `n` trials.
pub fn binomial_three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Probability, under a uniform phase and a uniform rotation angle, that
/// the squared change of the first coordinate of a radius-`r` point is at
/// least `threshold`. Midpoint rule on a `grid x grid` lattice.
pub fn rotation_first_coordinate_exceedance(r: f64, threshold: f64, grid: usize) -> f64 {
    let step = std::f64::consts::TAU / grid as f64;
    let mut hits = 0usize;
    for i in 0..grid {
        let phase = (i as f64 + 0.5) * step;
        let base = r * phase.cos();
        for j in 0..grid {
            let theta = (j as f64 + 0.5) * step;
            let moved = r * (phase + theta).cos();
            if (moved - base).powi(2) >= threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / (grid * grid) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_examples() {
        assert_eq!(oracle_p_value(&[1.0, 2.0, 3.0, 4.0], 2.5), 0.6);
        assert_eq!(oracle_p_value(&[], 123.0), 1.0);
        assert_eq!(oracle_p_value(&[2.0, 2.0, 2.0], 2.0), 1.0);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(oracle_auroc(&[0.9, 0.8], &[0.1, 0.2]), Some(1.0));
        assert_eq!(oracle_auroc(&[0.5], &[0.5]), Some(0.5));
        assert_eq!(oracle_auroc(&[0.9, 0.3], &[0.5, 0.1]), Some(0.75));
        assert_eq!(oracle_auroc(&[], &[0.5]), None);
    }

    #[test]
    fn quarter_turn_example() {
        assert_eq!(
            oracle_quarter_turn(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![3.0, 1.0, 4.0, 2.0]
        );
    }

    #[test]
    fn chi_square_table_values() {
        // Standard tables: chi2_{0.99}(1) = 6.635, chi2_{0.99}(99) = 134.642.
        assert!((chi_square_critical(1, 0.01) - 6.635).abs() < 1e-3);
        assert!((chi_square_critical(99, 0.01) - 134.642).abs() < 1e-3);
    }

    #[test]
    fn ks_known_values() {
        // Kolmogorov distribution: P(K > 1.628) ~= 0.01, P(K > 1.358) ~= 0.05.
        let big_n = 1_000_000;
        let d = |lambda: f64| lambda / (big_n as f64).sqrt();
        assert!((ks_p_value(d(1.628), big_n) - 0.01).abs() < 5e-4);
        assert!((ks_p_value(d(1.358), big_n) - 0.05).abs() < 1e-3);
        let grid: Vec<f64> = (1..=100).map(|i| f64::from(i) / 100.0).collect();
        assert!(ks_statistic_uniform(&grid) <= 0.01 + 1e-12);
    }

    #[test]
    fn exceedance_limits() {
        assert_eq!(rotation_first_coordinate_exceedance(0.1, 1.0, 200), 0.0);
        assert!(rotation_first_coordinate_exceedance(100.0, 1.0, 400) > 0.98);
    }
}
