use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of comparing a sample stream against a target mean and std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub label: String,
    pub n: usize,
    pub target_mean: f64,
    pub target_std: f64,
    pub empirical_mean: f64,
    pub empirical_std: f64,
    /// `target_std / sqrt(n)`.
    pub mean_std_error: f64,
    /// Allowed relative error on the std: `max(1%, 4 / sqrt(2n))`.
    pub std_rel_tolerance: f64,
    pub mean_pass: bool,
    pub std_pass: bool,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.mean_pass && self.std_pass
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Draws `n >= 1000` samples and tests the mean to 4 standard errors and the
/// std to `max(1%, 4/sqrt(2n))` relative error. A zero target std demands an
/// exact match: every sample equal to the target mean.
pub fn mc_moment_check(
    mut sample_fn: impl FnMut() -> f64,
    target_mean: f64,
    target_std: f64,
    n: usize,
) -> Result<MomentReport> {
    if n < 1000 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1000 samples, got {n}"
        )));
    }
    if !(target_std >= 0.0 && target_std.is_finite() && target_mean.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bad targets mean={target_mean}, std={target_std}"
        )));
    }
    // Welford
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    let mut exact = true;
    for i in 0..n {
        let v = sample_fn();
        if !v.is_finite() {
            return Err(Error::NonFiniteSample { index: i, value: v });
        }
        exact &= v == target_mean;
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let std = (m2 / n as f64).sqrt();
    let se = target_std / (n as f64).sqrt();
    let tol = 0.01f64.max(4.0 / (2.0 * n as f64).sqrt());
    let (mean_pass, std_pass) = if target_std == 0.0 {
        (exact, exact)
    } else {
        (
            (mean - target_mean).abs() < 4.0 * se,
            ((std - target_std) / target_std).abs() < tol,
        )
    };
    Ok(MomentReport {
        label: String::new(),
        n,
        target_mean,
        target_std,
        empirical_mean: mean,
        empirical_std: std,
        mean_std_error: se,
        std_rel_tolerance: tol,
        mean_pass,
        std_pass,
    })
}

pub fn write_moments_csv<W: Write>(reports: &[MomentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<moments>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn deterministic_source() {
        let r = mc_moment_check(|| 0.25, 0.25, 0.0, 1000).unwrap();
        assert!(r.passed());
        assert_eq!(r.empirical_std, 0.0);
        let r = mc_moment_check(|| 0.3, 0.25, 0.0, 1000).unwrap();
        assert!(!r.mean_pass);
    }

    #[test]
    fn standard_normal() {
        let mut rng = RngState::new(11);
        let r = mc_moment_check(|| rng.normal(), 0.0, 1.0, 1_000_000).unwrap();
        assert!(r.passed(), "{r:?}");
        let mut rng = RngState::new(11);
        let r = mc_moment_check(|| rng.normal(), 0.5, 1.0, 1_000_000).unwrap();
        assert!(!r.mean_pass);
        assert!(r.std_pass);
    }

    #[test]
    fn same_seed_same_verdict() {
        let run = |seed| {
            let mut rng = RngState::new(seed);
            mc_moment_check(|| 1.0 + 0.5 * rng.normal(), 1.0, 0.5, 5000).unwrap()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn rejects_small_n_and_nan() {
        assert!(mc_moment_check(|| 0.0, 0.0, 1.0, 999).is_err());
        let mut k = 0;
        let err = mc_moment_check(
            || {
                k += 1;
                if k == 7 {
                    f64::NAN
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            1000,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteSample { index: 6, .. }));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = RngState::new(1);
        let r = mc_moment_check(|| rng.normal(), 0.0, 1.0, 2000)
            .unwrap()
            .with_label("unit");
        let mut buf = Vec::new();
        write_moments_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let back: Vec<MomentReport> = csv::Reader::from_reader(buf.as_slice())
            .deserialize()
            .map(|x| x.unwrap())
            .collect();
        assert_eq!(back, vec![r]);
    }
}
