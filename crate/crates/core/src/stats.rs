use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: 0.0, se: 0.0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub df: usize,
    /// The paired differences have zero variance.
    pub degenerate: bool,
}

/// Two-sided Student t tail probability `P(|T| >= |t|)` with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p_value) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p_value,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        p_value: t_two_sided(t, df as f64),
        df,
        degenerate: false,
    })
}

/// One-sample Kolmogorov-Smirnov test against `U[0, 1]`: `(D, p-value)`,
/// with the asymptotic Kolmogorov distribution and the usual small-sample
/// correction of the scaled statistic.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = x.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [0.3, 0.5, 0.9];
        let t = paired_t_test(&a, &a).unwrap();
        assert_eq!((t.t, t.p_value, t.degenerate), (0.0, 1.0, true));
        assert!(paired_t_test(&a, &a[..2]).is_err());
    }

    #[test]
    fn known_t_value() {
        // Differences (1, 2, 3, 4): mean 2.5, sd 1.29099, t = 3.87298, df 3.
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 3.872983346207417).abs() < 1e-12);
        // Two-sided tail for t = 3.873 at 3 df.
        assert!((t.p_value - 0.030466).abs() < 1e-5, "{}", t.p_value);
    }

    #[test]
    fn t_tail_limits() {
        assert!((t_two_sided(0.0, 10.0) - 1.0).abs() < 1e-15);
        // Large df approaches the normal: P(|Z| > 1.96) = 0.05.
        assert!((t_two_sided(1.959963984540054, 1e7) - 0.05).abs() < 1e-6);
    }

    #[test]
    fn ks_statistic() {
        let (d, p) = ks_uniform(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        assert!((d - 0.1).abs() < 1e-12);
        assert!(p > 0.99);
        let (_, p) = ks_uniform(&[0.01; 50]);
        assert!(p < 1e-10);
    }

    #[test]
    fn mean_and_error() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (1.6666666666666667f64 / 4.0).sqrt()).abs() < 1e-15);
    }
}
