//! Small statistics toolkit: means with standard errors, jackknife over
//! replicas, and least-squares slopes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Whether `target` lies within `k` standard errors (plus `slack`).
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.se + slack
    }
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate { value: mean, se: f64::INFINITY };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate { value: mean, se: (var / n).sqrt() }
}

/// Jackknife for a smooth function of per-group means.
///
/// `groups[g]` holds group `g`'s statistics vector (all of equal length);
/// `f` maps a vector of means to the estimate.
pub fn jackknife<F>(groups: &[Vec<f64>], f: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    let g = groups.len();
    if g < 2 {
        return Err(Error::InsufficientReplicas { needed: 2, got: g });
    }
    let m = groups[0].len();
    let mut total = vec![0.0; m];
    for row in groups {
        assert_eq!(row.len(), m, "jackknife rows must share a length");
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    let full: Vec<f64> = total.iter().map(|t| t / g as f64).collect();
    let value = f(&full);
    let mut loo = vec![0.0; m];
    let thetas: Vec<f64> = groups
        .iter()
        .map(|row| {
            for ((l, t), v) in loo.iter_mut().zip(&total).zip(row) {
                *l = (t - v) / (g as f64 - 1.0);
            }
            f(&loo)
        })
        .collect();
    let mean_theta = thetas.iter().sum::<f64>() / g as f64;
    let var = thetas.iter().map(|t| (t - mean_theta).powi(2)).sum::<f64>() * (g as f64 - 1.0) / g as f64;
    Ok(Estimate { value, se: var.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual-based standard error of the slope.
    pub slope_se: f64,
    pub dof: usize,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Config(format!("need at least two paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = n - 2;
    let slope_se = if dof == 0 {
        0.0
    } else {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / dof as f64 / sxx).sqrt()
    };
    Ok(LinearFit { slope, intercept, slope_se, dof })
}

/// Two-sided Student-t critical value at confidence `level` (e.g. 0.95).
pub fn t_critical(level: f64, dof: usize) -> f64 {
    let dof = dof.max(1) as f64;
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    dist.inverse_cdf(0.5 + 0.5 * level)
}

/// Sample excess-free kurtosis `E(x - m)^4 / var^2`, and its standard error
/// under normality, `sqrt(24 / n)`.
pub fn kurtosis(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Estimate { value: m4 / (m2 * m2), se: (24.0 / n).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let e = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn jackknife_of_mean_matches_classical_se() {
        let xs = [0.3, 1.7, -0.4, 2.2, 0.9, 1.1];
        let groups: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let jk = jackknife(&groups, |m| m[0]).unwrap();
        let cl = mean_se(&xs);
        assert!((jk.value - cl.value).abs() < 1e-14);
        assert!((jk.se - cl.se).abs() < 1e-14);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 1.5).abs() < 1e-14);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn t_critical_values() {
        assert!((t_critical(0.95, 2) - 4.302652729911275).abs() < 1e-6);
        assert!((t_critical(0.95, 1000) - 1.962).abs() < 1e-3);
    }
}
