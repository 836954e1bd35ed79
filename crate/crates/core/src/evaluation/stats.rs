//! Rank correlation, effect sizes and small descriptive helpers.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rng;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Average ranks (1-based); ties share the mean of the ranks they span.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Input("correlation needs at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical("correlation undefined for a constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input("spearman inputs differ in length".into()));
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// Two-sided p-value for a correlation coefficient via the t approximation.
pub fn correlation_p_value(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = n as f64 - 2.0;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectSize {
    pub d: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn pooled_d(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b))
        / (na + nb - 2.0))
        .sqrt();
    if pooled > 0.0 && pooled.is_finite() {
        Some((mean(a) - mean(b)) / pooled)
    } else {
        None
    }
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cohen's d of `a` relative to `b` (pooled SD) with a percentile bootstrap 95% CI.
pub fn cohens_d(a: &[f64], b: &[f64], n_boot: usize, seed: u64) -> Result<EffectSize> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input("each group needs at least two observations".into()));
    }
    let d = pooled_d(a, b).ok_or_else(|| {
        Error::Numerical("pooled standard deviation is zero; Cohen's d is unbounded".into())
    })?;
    let mut rng = rng::substream(seed, rng::streams::BOOTSTRAP);
    let mut boots = Vec::with_capacity(n_boot);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..n_boot {
        for v in ra.iter_mut() {
            *v = a[rng.random_range(0..a.len())];
        }
        for v in rb.iter_mut() {
            *v = b[rng.random_range(0..b.len())];
        }
        if let Some(x) = pooled_d(&ra, &rb) {
            boots.push(x);
        }
    }
    let (ci_lo, ci_hi) = if boots.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        boots.sort_by(f64::total_cmp);
        (percentile_sorted(&boots, 0.025), percentile_sorted(&boots, 0.975))
    };
    Ok(EffectSize { d, ci_lo, ci_hi })
}

/// Population z-scores (ddof = 0). A constant input maps to zeros.
pub fn z_scores(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / sd).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn spearman_identities() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties_matches_hand_ranks() {
        // ranks x = (1, 2.5, 2.5, 4), y = (1, 3, 2, 4); r = 4.5 / sqrt(4.5 * 5)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 4.5 / (22.5f64).sqrt()).abs() < 1e-12);
        assert!((r - 0.948_683_298_050_513_8).abs() < 1e-12);
    }

    #[test]
    fn cohens_d_cases() {
        let g = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(cohens_d(&g, &g, 100, 1).unwrap().d, 0.0);
        assert!(cohens_d(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 10, 1).is_err());
    }

    #[test]
    fn cohens_d_monte_carlo() {
        let mut r = crate::rng::substream(5, "test");
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..10_000).map(|_| n.sample(&mut r) + 1.0).collect();
        let b: Vec<f64> = (0..10_000).map(|_| n.sample(&mut r)).collect();
        let e = cohens_d(&a, &b, 200, 3).unwrap();
        assert!((e.d - 1.0).abs() < 0.05, "{}", e.d);
        assert!(e.ci_lo < e.d && e.d < e.ci_hi);
    }

    #[test]
    fn z_scores_are_standardized() {
        let z = z_scores(&[1.0, 5.0, 2.0, 8.0, 3.0]);
        let m = mean(&z);
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile_sorted(&v, 0.01) - 1.99).abs() < 1e-12);
        assert!((percentile_sorted(&v, 0.99) - 99.01).abs() < 1e-12);
    }
}
