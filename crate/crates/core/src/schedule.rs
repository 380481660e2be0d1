//! Time-dependent shift fractions `eta_t`, increments `alpha_t` and noise
//! magnitude `kappa`.
//!
//! `sqrt(eta_t)` follows a geometric curve between `sqrt(eta1)` and
//! `sqrt(etaT)` whose progress is warped by the exponent `p`:
//!
//! ```text
//! sqrt(eta_t) = sqrt(eta1) * (sqrt(etaT) / sqrt(eta1)) ^ (((t - 1) / (T - 1)) ^ p)
//! ```
//!
//! with `eta_0 = 0` prepended and both endpoints stored exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub steps: usize,
    pub kappa: f64,
    pub eta1: f64,
    #[serde(rename = "etaT")]
    pub eta_t: f64,
    pub p: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 5,
            kappa: 2.0,
            eta1: 0.001,
            eta_t: 0.9999,
            p: 0.3,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.kappa, self.eta1, self.eta_t, self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    /// `eta[0] = 0`, `eta[t]` for `t` in `1..=T`.
    eta: Vec<f64>,
}

pub fn build_schedule(
    steps: usize,
    kappa: f64,
    eta1: f64,
    eta_t: f64,
    p: f64,
) -> Result<NoiseSchedule> {
    let bad = |msg: String| Err(Error::InvalidParameter(msg));
    if steps < 1 {
        return bad("steps must be >= 1".into());
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return bad(format!("kappa must be positive, got {kappa}"));
    }
    if !(eta1 > 0.0 && eta1 < eta_t && eta_t <= 1.0) {
        return bad(format!(
            "need 0 < eta1 < etaT <= 1, got eta1={eta1}, etaT={eta_t}"
        ));
    }
    if !(p > 0.0 && p.is_finite()) {
        return bad(format!("p must be positive, got {p}"));
    }

    let mut eta = Vec::with_capacity(steps + 1);
    eta.push(0.0);
    if steps == 1 {
        eta.push(eta_t);
    } else {
        let (s1, st) = (eta1.sqrt(), eta_t.sqrt());
        let ratio = st / s1;
        for t in 1..=steps {
            let v = if t == 1 {
                eta1
            } else if t == steps {
                eta_t
            } else {
                let progress = ((t - 1) as f64 / (steps - 1) as f64).powf(p);
                let root = s1 * ratio.powf(progress);
                root * root
            };
            eta.push(v);
        }
    }
    if let Some(t) = (1..eta.len()).find(|&t| eta[t] <= eta[t - 1]) {
        return bad(format!(
            "schedule not strictly increasing at t={t} ({} <= {})",
            eta[t],
            eta[t - 1]
        ));
    }
    Ok(NoiseSchedule {
        params: ScheduleParams {
            steps,
            kappa,
            eta1,
            eta_t,
            p,
        },
        eta,
    })
}

impl NoiseSchedule {
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn kappa(&self) -> f64 {
        self.params.kappa
    }

    /// Same schedule with a different noise magnitude.
    pub fn with_kappa(&self, kappa: f64) -> Result<NoiseSchedule> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be >= 0, got {kappa}"
            )));
        }
        let mut s = self.clone();
        s.params.kappa = kappa;
        Ok(s)
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn eta(&self, t: usize) -> Result<f64> {
        self.eta.get(t).copied().ok_or(Error::StepOutOfRange {
            t,
            lo: 0,
            hi: self.steps(),
        })
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(self.eta[t] - self.eta[t - 1])
    }

    /// Initial-state noise level `kappa * sqrt(eta_T)`.
    pub fn sigma_max(&self) -> f64 {
        self.params.kappa * self.eta[self.steps()].sqrt()
    }

    /// Writes `t,eta,alpha,sqrt_eta` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "eta", "alpha", "sqrt_eta"])?;
        for t in 0..=self.steps() {
            let alpha = if t == 0 { 0.0 } else { self.alpha(t)? };
            w.write_record(&[
                t.to_string(),
                format!("{:.17e}", self.eta[t]),
                format!("{:.17e}", alpha),
                format!("{:.17e}", self.eta[t].sqrt()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<schedule csv>", e))?;
        Ok(())
    }
}
