//! Two-sample comparison used to contrast experimental settings.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: f64,
    /// Cohen's d with the pooled standard deviation.
    pub cohens_d: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sum_sq_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum()
}

/// Student's independent two-sample t-test with pooled variance.
pub fn independent_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("t-test inputs must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled_var = (sum_sq_dev(a) + sum_sq_dev(b)) / df;
    if pooled_var <= 0.0 {
        // identical constant groups compare as equal
        if mean(a) == mean(b) {
            return Ok(TTest { t: 0.0, p: 1.0, df, cohens_d: 0.0 });
        }
        return Err(Error::InvalidArgument("zero pooled variance".into()));
    }
    let diff = mean(a) - mean(b);
    let t = diff / (pooled_var * (1.0 / na + 1.0 / nb)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        cohens_d: diff / pooled_var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let r = independent_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        // pooled sd 1, se sqrt(2/3)
        assert!((r.t - (-3.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((r.cohens_d + 3.0).abs() < 1e-12);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn identical_groups() {
        let r = independent_t_test(&[0.3, 0.5, 0.4], &[0.3, 0.5, 0.4]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.cohens_d, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_groups_rejected() {
        assert!(independent_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(independent_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }
}
