//! Order statistics and bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// 5th percentile, the "95%-likely" value.
    pub p5: f64,
}

/// Quantile `p` of ascending `sorted` with linear interpolation between
/// order statistics at position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySamples);
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn summary_stats(samples: &[f64]) -> Result<Summary> {
    let s = sorted_copy(samples);
    Ok(Summary {
        count: s.len(),
        median: quantile_sorted(&s, 0.5)?,
        p5: quantile_sorted(&s, 0.05)?,
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

/// Empirical CDF points `(x_(i), i / n)` of ascending samples.
pub fn ecdf(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn resampled_mean<R: Rng>(v: &[f64], rng: &mut R) -> f64 {
    (0..v.len()).map(|_| v[rng.gen_range(0..v.len())]).sum::<f64>() / v.len() as f64
}

/// Percentile bootstrap interval for `mean(a) - mean(b)` with the two
/// samples resampled independently.
pub fn bootstrap_mean_diff<R: Rng>(a: &[f64], b: &[f64], resamples: usize, level: f64, rng: &mut R) -> Result<(f64, f64, f64)> {
    if a.is_empty() || b.is_empty() || resamples == 0 {
        return Err(Error::EmptySamples);
    }
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|_| resampled_mean(a, rng) - resampled_mean(b, rng))
        .collect();
    diffs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        mean(a) - mean(b),
        quantile_sorted(&diffs, tail)?,
        quantile_sorted(&diffs, 1.0 - tail)?,
    ))
}

/// Percentile bootstrap interval for `mean(a)`.
pub fn bootstrap_mean<R: Rng>(a: &[f64], resamples: usize, level: f64, rng: &mut R) -> Result<(f64, f64)> {
    if a.is_empty() || resamples == 0 {
        return Err(Error::EmptySamples);
    }
    let mut means: Vec<f64> = (0..resamples).map(|_| resampled_mean(a, rng)).collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail)?, quantile_sorted(&means, 1.0 - tail)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, SeedTree};

    #[test]
    fn linear_interpolation_quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summary_stats(&v).unwrap();
        assert!((s.median - 50.5).abs() < 1e-12);
        assert!((s.p5 - 5.95).abs() < 1e-12);
        let c = summary_stats(&[3.0; 7]).unwrap();
        assert_eq!((c.median, c.p5), (3.0, 3.0));
        let mut rev = v.clone();
        rev.reverse();
        assert_eq!(summary_stats(&rev).unwrap(), s);
        assert!(matches!(summary_stats(&[]), Err(Error::EmptySamples)));
        assert_eq!(quantile_sorted(&[2.0], 0.3).unwrap(), 2.0);
    }

    #[test]
    fn ecdf_steps() {
        assert_eq!(ecdf(&[1.0]), vec![(1.0, 1.0)]);
        let e = ecdf(&[1.0, 2.0, 2.0, 5.0]);
        assert!(e.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(e.last().unwrap().1, 1.0);
    }

    #[test]
    fn bootstrap_brackets_difference() {
        let mut rng = SeedTree::new(1).rng(Domain::Bootstrap, 0);
        let a: Vec<f64> = (0..200).map(|i| 10.0 + (i % 7) as f64).collect();
        let b: Vec<f64> = (0..200).map(|i| 8.0 + (i % 5) as f64).collect();
        let (d, lo, hi) = bootstrap_mean_diff(&a, &b, 1000, 0.95, &mut rng).unwrap();
        assert!(lo < d && d < hi && lo > 0.0);
        let (lo, hi) = bootstrap_mean(&a, 500, 0.95, &mut rng).unwrap();
        assert!(lo < mean(&a) && mean(&a) < hi);
    }
}
