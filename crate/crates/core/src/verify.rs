//! Self-check suite behind `upsr verify`.
//!
//! Each check compares an implementation against an independent oracle
//! (closed-form arithmetic, Monte Carlo moments, or the brute-force grid
//! posterior) and records targets and observed values for the JSON report.
//!
//! [`Mutation::InflateNoise`] perturbs the harness side only: drawn samples
//! are pushed away from their mean by 10% in standard deviation and the
//! closed-form reverse density is widened by the same factor. A working
//! suite must catch it.

use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    bayes_grid_posterior, gaussian_pdf, mc_moment_check, psnr_uncapped, GridSpec, MomentReport,
};
use crate::denoiser::oracle_denoiser;
use crate::diffusion::{
    forward_step, reverse_coefficients, reverse_step, run_reverse_chain, sample_initial_state,
    sample_marginal,
};
use crate::error::Result;
use crate::image::Image;
use crate::predictor::SmoothingPredictor;
use crate::resample::{pixel_shuffle, pixel_unshuffle};
use crate::rng::RngState;
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleParams};
use crate::uncertainty::{weight_coefficient, WeightMap, WeightingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mutation {
    /// Scale injected-noise std by 1.1 as seen by the checks.
    InflateNoise,
}

const INFLATE: f64 = 1.1;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Only run checks whose `group/name` contains this substring.
    pub filter: Option<String>,
    pub mutation: Option<Mutation>,
    /// Monte Carlo draws per moment check.
    pub samples: usize,
    pub schedule: ScheduleParams,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            filter: None,
            mutation: None,
            samples: 1_000_000,
            schedule: ScheduleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub group: String,
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub mutation: Option<Mutation>,
    pub passed: bool,
    pub total: usize,
    pub failed: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Ctx<'a> {
    opts: &'a VerifyOptions,
    schedule: NoiseSchedule,
    rng: RngState,
}

impl Ctx<'_> {
    fn inflate(&self) -> f64 {
        match self.opts.mutation {
            Some(Mutation::InflateNoise) => INFLATE,
            None => 1.0,
        }
    }

    /// Moment check over every sample of `img`, each centered on `mean`.
    fn image_moments(&self, img: &Image, mean: f64, target_std: f64) -> Result<MomentReport> {
        let k = self.inflate();
        let mut it = img.data().iter();
        mc_moment_check(
            || {
                let v = *it.next().expect("image holds n samples") as f64;
                mean + k * (v - mean)
            },
            mean,
            target_std,
            img.data().len(),
        )
    }
}

fn moments_json(r: &MomentReport) -> serde_json::Value {
    serde_json::to_value(r).unwrap_or(serde_json::Value::Null)
}

type CheckFn = fn(&mut Ctx<'_>) -> Result<(bool, serde_json::Value)>;

const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("schedule", "endpoints", check_schedule_endpoints),
    ("schedule", "telescoping", check_schedule_telescoping),
    ("schedule", "monotone", check_schedule_monotone),
    ("uncertainty", "weight_anchors", check_weight_anchors),
    ("uncertainty", "weight_monotone", check_weight_monotone),
    ("core", "shuffle_round_trip", check_shuffle),
    ("diffusion", "forward_step_moments", check_forward_step),
    ("diffusion", "marginal_moments", check_marginal),
    ("diffusion", "composition", check_composition),
    ("diffusion", "initial_state_moments", check_initial_state),
    ("diffusion", "reverse_step_moments", check_reverse_step),
    ("diffusion", "final_step_determinism", check_final_step),
    ("diffusion", "oracle_chain", check_oracle_chain),
    ("bayes", "reverse_posterior_tv", check_bayes),
];

pub fn check_names() -> Vec<String> {
    CHECKS.iter().map(|(g, n, _)| format!("{g}/{n}")).collect()
}

pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let root = RngState::new(opts.seed);
    let mut checks = Vec::new();
    for (group, name, f) in CHECKS {
        let full = format!("{group}/{name}");
        if let Some(filt) = &opts.filter {
            if !full.contains(filt.as_str()) {
                continue;
            }
        }
        let mut ctx = Ctx {
            opts,
            schedule: opts.schedule.build()?,
            rng: root.split(&full),
        };
        let (passed, details) = match f(&mut ctx) {
            Ok(v) => v,
            Err(e) => (false, json!({ "error": e.to_string() })),
        };
        log::info!("{full}: {}", if passed { "pass" } else { "FAIL" });
        checks.push(CheckResult {
            group: group.to_string(),
            name: name.to_string(),
            passed,
            details,
        });
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}/{}", c.group, c.name))
        .collect();
    Ok(VerifyReport {
        seed: opts.seed,
        mutation: opts.mutation,
        passed: failed.is_empty(),
        total: checks.len(),
        failed,
        checks,
    })
}

fn check_schedule_endpoints(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let s = &c.schedule;
    let p = s.params();
    let (e0, e1, et) = (s.eta(0)?, s.eta(1)?, s.eta(s.steps())?);
    let ok = e0 == 0.0 && et == p.eta_t && (s.steps() == 1 || e1 == p.eta1);
    Ok((
        ok,
        json!({ "eta0": e0, "eta1": e1, "etaT": et, "expected_eta1": p.eta1, "expected_etaT": p.eta_t }),
    ))
}

fn check_schedule_telescoping(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let s = &c.schedule;
    let sum: f64 = (1..=s.steps()).map(|t| s.alpha(t)).sum::<Result<f64>>()?;
    let err = (sum - s.eta(s.steps())?).abs();
    Ok((
        err < 1e-12,
        json!({ "sum_alpha": sum, "etaT": s.eta(s.steps())?, "abs_error": err }),
    ))
}

fn check_schedule_monotone(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let mut bad = 0;
    for _ in 0..1000 {
        let steps = c.rng.int_in(1, 15);
        let eta1 = c.rng.uniform_in(1e-4, 0.5);
        let eta_t = c.rng.uniform_in(eta1 + 1e-3, 1.0);
        let p = c.rng.uniform_in(0.1, 3.0);
        let s = build_schedule(steps, 1.0, eta1, eta_t.min(1.0), p)?;
        if s.etas().windows(2).any(|w| w[1] <= w[0]) {
            bad += 1;
        }
    }
    Ok((bad == 0, json!({ "cases": 1000, "violations": bad })))
}

fn check_weight_anchors(_: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let cases = [(0.0, 0.4), (0.05, 1.0), (0.025, 0.7), (0.9, 1.0)];
    let mut rows = Vec::new();
    let mut ok = true;
    for (psi, want) in cases {
        let got = weight_coefficient(psi, 0.4, 0.05)?;
        ok &= (got - want).abs() <= 1e-9;
        rows.push(json!({ "psi": psi, "expected": want, "got": got }));
    }
    Ok((ok, json!(rows)))
}

fn check_weight_monotone(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let mut bad = 0;
    for _ in 0..10_000 {
        let (a, b) = (c.rng.uniform_in(0.0, 0.1), c.rng.uniform_in(0.0, 0.1));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if weight_coefficient(lo, 0.4, 0.05)? > weight_coefficient(hi, 0.4, 0.05)? {
            bad += 1;
        }
    }
    Ok((bad == 0, json!({ "pairs": 10_000, "violations": bad })))
}

fn check_shuffle(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let mut ok = true;
    for r in [1, 2, 4] {
        let img = Image::from_fn(8 * r, 4 * r, 3, |_, _, _| c.rng.uniform() as f32)?;
        ok &= pixel_shuffle(&pixel_unshuffle(&img, r)?, r)? == img;
    }
    Ok((ok, json!({ "factors": [1, 2, 4] })))
}

/// Square side holding roughly `n` single-channel samples.
fn side(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(32)
}

fn filled(n: usize, v: f64) -> Result<Image> {
    Image::filled(side(n), side(n), 1, v as f32)
}

/// `v` as stored in an image sample.
fn f32v(v: f64) -> f64 {
    v as f32 as f64
}

fn check_forward_step(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    // scalar case: x_prev = x0 = 0.2, y0 = 0.6, alpha = 0.25, kappa 2, w 0.5
    let s = build_schedule(1, 2.0, 0.1, 0.25, 1.0)?;
    let n = c.opts.samples;
    let w = WeightMap::uniform(side(n), side(n), 0.5)?;
    let out = forward_step(
        &filled(n, 0.2)?,
        &filled(n, 0.2)?,
        &filled(n, 0.6)?,
        &s,
        &w,
        1,
        &mut c.rng,
    )?;
    let mean = f32v(0.2) + 0.25 * (f32v(0.6) - f32v(0.2));
    let r = c.image_moments(&out, mean, 0.5)?;
    Ok((r.passed(), moments_json(&r)))
}

fn check_marginal(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let n = c.opts.samples / 4;
    let mut ok = true;
    let mut rows = Vec::new();
    for t in 1..=c.schedule.steps() {
        let (x0, y0, wv) = (
            c.rng.uniform_in(0.0, 1.0),
            c.rng.uniform_in(0.0, 1.0),
            c.rng.uniform_in(0.4, 1.0),
        );
        let w = WeightMap::uniform(side(n), side(n), wv)?;
        let s = c.schedule.clone();
        let out = sample_marginal(&filled(n, x0)?, &filled(n, y0)?, &s, &w, t, &mut c.rng)?;
        let eta = s.eta(t)?;
        let mean = f32v(x0) + eta * (f32v(y0) - f32v(x0));
        let r = c.image_moments(&out, mean, s.kappa() * wv * eta.sqrt())?;
        ok &= r.passed();
        rows.push(moments_json(&r.with_label(format!("t={t}"))));
    }
    Ok((ok, json!(rows)))
}

fn check_composition(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let n = c.opts.samples / 4;
    let s = c.schedule.clone();
    let wv = 0.7;
    let w = WeightMap::uniform(side(n), side(n), wv)?;
    let (x0, y0) = (filled(n, 0.3)?, filled(n, 0.8)?);
    let mut x = x0.clone();
    let mut ok = true;
    let mut rows = Vec::new();
    for t in 1..=s.steps() {
        x = forward_step(&x, &x0, &y0, &s, &w, t, &mut c.rng)?;
        let eta = s.eta(t)?;
        let mean = f32v(0.3) + eta * (f32v(0.8) - f32v(0.3));
        let r = c.image_moments(&x, mean, s.kappa() * wv * eta.sqrt())?;
        ok &= r.passed();
        rows.push(moments_json(&r.with_label(format!("t={t}"))));
    }
    Ok((ok, json!(rows)))
}

fn check_initial_state(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let n = c.opts.samples / 2;
    let s = c.schedule.clone();
    let mut ok = true;
    let mut rows = Vec::new();
    for wv in [0.4, 1.0] {
        let w = WeightMap::uniform(side(n), side(n), wv)?;
        let out = sample_initial_state(&filled(n, 0.5)?, &s, &w, &mut c.rng)?;
        let r = c.image_moments(&out, f32v(0.5), wv * s.sigma_max())?;
        ok &= r.passed();
        rows.push(moments_json(&r.with_label(format!("w={wv}"))));
    }
    Ok((ok, json!(rows)))
}

fn check_reverse_step(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    // eta_1 = 0.2, eta_2 = 0.6, x_t = 1, x0_hat = 0
    let s = build_schedule(2, 2.0, 0.2, 0.6, 1.0)?;
    let n = c.opts.samples;
    let w = WeightMap::uniform(side(n), side(n), 1.0)?;
    let out = reverse_step(&filled(n, 1.0)?, &filled(n, 0.0)?, &s, &w, 2, &mut c.rng)?;
    let target_std = 2.0 * ((0.2f64 / 0.6) * 0.4).sqrt();
    let r = c.image_moments(&out, 0.2 / 0.6, target_std)?;
    Ok((r.passed(), moments_json(&r)))
}

fn check_final_step(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let x0_hat = Image::from_fn(8, 8, 3, |_, _, _| c.rng.uniform() as f32)?;
    let w = WeightMap::uniform(8, 8, 1.0)?;
    let mut distinct = 0;
    for _ in 0..1000 {
        let x_t = Image::from_fn(8, 8, 3, |_, _, _| c.rng.normal() as f32)?;
        if reverse_step(&x_t, &x0_hat, &c.schedule, &w, 1, &mut c.rng)? != x0_hat {
            distinct += 1;
        }
    }
    Ok((
        distinct == 0,
        json!({ "draws": 1000, "mismatches": distinct }),
    ))
}

fn check_oracle_chain(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let mut worst = f64::INFINITY;
    let pred = SmoothingPredictor::new(2.0)?;
    for i in 0..5u64 {
        let x0 = Image::from_fn(32, 32, 3, |_, _, _| c.rng.uniform() as f32)?;
        let y0 = crate::degradation::gaussian_blur(&x0, 1.5)?;
        let mut d = oracle_denoiser(x0.clone(), 0.0, c.rng.fork(i))?;
        let out = run_reverse_chain(
            &y0,
            &pred,
            &mut d,
            &c.schedule,
            &WeightingParams::default(),
            &c.rng.fork(100 + i),
        )?;
        worst = worst.min(psnr_uncapped(&out, &x0)?);
    }
    Ok((
        worst > 100.0,
        json!({ "images": 5, "min_psnr_db": if worst.is_finite() { json!(worst) } else { json!("inf") } }),
    ))
}

fn check_bayes(c: &mut Ctx<'_>) -> Result<(bool, serde_json::Value)> {
    let k = c.inflate();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for _ in 0..20 {
        let steps = c.rng.int_in(2, 10);
        let s = build_schedule(
            steps,
            c.rng.uniform_in(0.5, 3.0),
            0.001,
            0.9999,
            c.rng.uniform_in(0.2, 2.0),
        )?;
        let t = c.rng.int_in(2, steps);
        let (x0, y0) = (c.rng.uniform(), c.rng.uniform());
        let w = c.rng.uniform_in(0.4, 1.0);
        let eta = s.eta(t)?;
        let x_t = x0 + eta * (y0 - x0) + s.kappa() * w * eta.sqrt() * c.rng.normal();
        let g = bayes_grid_posterior(x_t, x0, y0, &s, w, t, &GridSpec::default())?;
        let rc = reverse_coefficients(&s, t)?;
        let mean = rc.x_t_coef * x_t + rc.x0_coef * x0;
        let std = k * w * rc.noise_scale;
        let tv = g.tv_distance_to(|x| gaussian_pdf(x, mean, std));
        worst = worst.max(tv);
        rows.push(json!({ "T": steps, "t": t, "x_t": x_t, "x0": x0, "y0": y0, "w": w, "tv": tv }));
    }
    Ok((worst < 1e-3, json!({ "max_tv": worst, "cases": rows })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            samples: 200_000,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn suite_passes() {
        let r = run_suite(&quick()).unwrap();
        assert!(r.passed, "failed: {:?}", r.failed);
        assert_eq!(r.total, CHECKS.len());
    }

    #[test]
    fn mutation_is_caught() {
        let r = run_suite(&VerifyOptions {
            mutation: Some(Mutation::InflateNoise),
            ..quick()
        })
        .unwrap();
        assert!(!r.passed);
        assert!(r.failed.iter().any(|f| f.starts_with("bayes/")));
        assert!(r.failed.iter().any(|f| f.contains("moments")));
        assert!(!r.failed.iter().any(|f| f.starts_with("schedule/")));
    }

    #[test]
    fn filter_selects_group() {
        let r = run_suite(&VerifyOptions {
            filter: Some("schedule".into()),
            ..quick()
        })
        .unwrap();
        assert_eq!(r.total, 3);
        assert!(r.checks.iter().all(|c| c.group == "schedule"));
        let json = r.to_json().unwrap();
        assert!(json.contains("telescoping"));
    }
}
