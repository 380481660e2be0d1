//! Weighted residual-shifting diffusion.
//!
//! Every noise term is `kappa * w(p) * sqrt(v) * xi` where `w(p)` is the
//! per-pixel weight (shared by all channels of a pixel) and `xi ~ N(0, 1)`
//! is drawn independently per sample in raster order.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::predictor::SrPredictor;
use crate::rng::RngState;
use crate::schedule::NoiseSchedule;
use crate::uncertainty::{weight_map_for, UncertaintyMap, WeightMap, WeightingParams};

/// `mean + scale * w * xi` per sample, computed in `f64`. With `scale = 0`
/// no draws are consumed and `mean` comes back unchanged.
fn add_weighted_noise(
    mean: Vec<f64>,
    like: &Image,
    w: &WeightMap,
    scale: f64,
    rng: &mut RngState,
) -> Result<Image> {
    let c = like.channels();
    let data = if scale == 0.0 {
        mean.into_iter().map(|m| m as f32).collect()
    } else {
        mean.into_iter()
            .enumerate()
            .map(|(i, m)| (m + scale * w.for_sample(i, c) * rng.normal()) as f32)
            .collect()
    };
    Image::new(like.height(), like.width(), c, data)
}

fn check_inputs(images: &[(&Image, &str)], w: &WeightMap) -> Result<()> {
    let (first, _) = images[0];
    for (img, what) in &images[1..] {
        first.ensure_same_shape(img, what)?;
    }
    w.ensure_matches(first)
}

fn check_step(s: &NoiseSchedule, t: usize, lo: usize) -> Result<()> {
    if t < lo || t > s.steps() {
        return Err(Error::StepOutOfRange {
            t,
            lo,
            hi: s.steps(),
        });
    }
    Ok(())
}

/// One forward step: `x_prev + alpha_t (y0 - x0) + kappa w sqrt(alpha_t) xi`.
pub fn forward_step(
    x_prev: &Image,
    x0: &Image,
    y0: &Image,
    s: &NoiseSchedule,
    w: &WeightMap,
    t: usize,
    rng: &mut RngState,
) -> Result<Image> {
    check_step(s, t, 1)?;
    check_inputs(
        &[
            (x_prev, "forward_step x_prev"),
            (x0, "forward_step x0"),
            (y0, "forward_step y0"),
        ],
        w,
    )?;
    let a = s.alpha(t)?;
    let mean = x_prev
        .data()
        .iter()
        .zip(x0.data())
        .zip(y0.data())
        .map(|((&xp, &x), &y)| xp as f64 + a * (y as f64 - x as f64))
        .collect();
    add_weighted_noise(mean, x_prev, w, s.kappa() * a.sqrt(), rng)
}

/// Direct sample from `q(x_t | x0, y0)`: `x0 + eta_t (y0 - x0) + kappa w
/// sqrt(eta_t) xi`. Returns `x0` unchanged at `t = 0`.
pub fn sample_marginal(
    x0: &Image,
    y0: &Image,
    s: &NoiseSchedule,
    w: &WeightMap,
    t: usize,
    rng: &mut RngState,
) -> Result<Image> {
    check_step(s, t, 0)?;
    check_inputs(&[(x0, "sample_marginal x0"), (y0, "sample_marginal y0")], w)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let eta = s.eta(t)?;
    let mean = x0
        .data()
        .iter()
        .zip(y0.data())
        .map(|(&x, &y)| x as f64 + eta * (y as f64 - x as f64))
        .collect();
    add_weighted_noise(mean, x0, w, s.kappa() * eta.sqrt(), rng)
}

/// Inference prior `y0 + kappa w sqrt(eta_T) xi`.
pub fn sample_initial_state(
    y0: &Image,
    s: &NoiseSchedule,
    w: &WeightMap,
    rng: &mut RngState,
) -> Result<Image> {
    w.ensure_matches(y0)?;
    let mean = y0.data().iter().map(|&v| v as f64).collect();
    add_weighted_noise(mean, y0, w, s.sigma_max(), rng)
}

/// Scalar coefficients of the reverse transition at step `t`:
/// `x_{t-1} ~ N(x_t_coef * x_t + x0_coef * x0_hat, (w * noise_scale)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoefficients {
    pub x_t_coef: f64,
    pub x0_coef: f64,
    /// `kappa * sqrt(eta_{t-1} alpha_t / eta_t)`; multiply by `w` for the std.
    pub noise_scale: f64,
}

pub fn reverse_coefficients(s: &NoiseSchedule, t: usize) -> Result<ReverseCoefficients> {
    check_step(s, t, 1)?;
    let (eta_prev, eta, alpha) = (s.eta(t - 1)?, s.eta(t)?, s.alpha(t)?);
    Ok(ReverseCoefficients {
        x_t_coef: eta_prev / eta,
        x0_coef: alpha / eta,
        noise_scale: s.kappa() * (eta_prev * alpha / eta).sqrt(),
    })
}

fn reverse_mean(x_t: &Image, x0_hat: &Image, c: &ReverseCoefficients) -> Vec<f64> {
    x_t.data()
        .iter()
        .zip(x0_hat.data())
        .map(|(&x, &x0)| c.x_t_coef * x as f64 + c.x0_coef * x0 as f64)
        .collect()
}

/// One reverse step. At `t = 1` the result is `x0_hat` exactly and no
/// random numbers are drawn.
pub fn reverse_step(
    x_t: &Image,
    x0_hat: &Image,
    s: &NoiseSchedule,
    w: &WeightMap,
    t: usize,
    rng: &mut RngState,
) -> Result<Image> {
    check_step(s, t, 1)?;
    check_inputs(
        &[(x_t, "reverse_step x_t"), (x0_hat, "reverse_step x0_hat")],
        w,
    )?;
    if t == 1 {
        return Ok(x0_hat.clone());
    }
    let c = reverse_coefficients(s, t)?;
    add_weighted_noise(reverse_mean(x_t, x0_hat, &c), x_t, w, c.noise_scale, rng)
}

/// What the chain reports after drawing the prior and after each reverse
/// step.
#[derive(Debug)]
pub struct StepTrace<'a> {
    /// `T` for the prior; the step being undone for reverse steps.
    pub t: usize,
    pub is_prior: bool,
    /// Noise-free part of the draw (`y0` for the prior).
    pub mean: &'a Image,
    /// The drawn state (`x_T` for the prior, `x_{t-1}` for a reverse step).
    pub state: &'a Image,
    /// Denoiser output used by this step (absent for the prior).
    pub x0_hat: Option<&'a Image>,
    /// Unweighted noise scale; per-pixel std is `w * noise_scale`.
    pub noise_scale: f64,
    pub weights: &'a WeightMap,
}

/// Injected-noise statistics for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct StepStats {
    pub kind: String,
    pub t: usize,
    pub noise_scale: f64,
    pub expected_std_min: f64,
    pub expected_std_max: f64,
    pub injected_mean: f64,
    pub injected_std: f64,
    /// Std of the injected noise divided by its pixel weight; equals
    /// `noise_scale` in distribution.
    pub normalized_std: f64,
}

impl StepStats {
    pub fn from_trace(tr: &StepTrace<'_>) -> StepStats {
        let c = tr.state.channels();
        let n = tr.state.data().len() as f64;
        let (mut s, mut sq, mut ns) = (0.0, 0.0, 0.0);
        for (i, (&x, &m)) in tr.state.data().iter().zip(tr.mean.data()).enumerate() {
            let e = x as f64 - m as f64;
            s += e;
            sq += e * e;
            let w = tr.weights.for_sample(i, c);
            if w > 0.0 {
                ns += (e / w) * (e / w);
            }
        }
        let mean = s / n;
        let (wmin, wmax) = tr
            .weights
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        StepStats {
            kind: if tr.is_prior { "prior" } else { "reverse" }.to_string(),
            t: tr.t,
            noise_scale: tr.noise_scale,
            expected_std_min: wmin * tr.noise_scale,
            expected_std_max: wmax * tr.noise_scale,
            injected_mean: mean,
            injected_std: (sq / n - mean * mean).max(0.0).sqrt(),
            normalized_std: (ns / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Final image, clamped to `[0, 1]`.
    pub image: Image,
    pub g_y0: Image,
    pub uncertainty: UncertaintyMap,
    pub weights: WeightMap,
}

/// Full sampler: `g(y0)`, weight map, weighted prior, then reverse steps
/// `T..=1`, reporting each draw to `observe`.
pub fn run_reverse_chain_observed(
    y0: &Image,
    predictor: &dyn SrPredictor,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    weighting: &WeightingParams,
    rng: &RngState,
    observe: &mut dyn FnMut(&StepTrace<'_>) -> Result<()>,
) -> Result<ChainOutput> {
    let g_y0 = predictor.predict(y0)?;
    y0.ensure_same_shape(&g_y0, "predictor output")?;
    let (uncertainty, weights) = weight_map_for(y0, &g_y0, weighting)?;

    let mut prior_rng = rng.split("prior");
    let mut step_rng = rng.split("reverse");
    let mut x = sample_initial_state(y0, s, &weights, &mut prior_rng)?;
    observe(&StepTrace {
        t: s.steps(),
        is_prior: true,
        mean: y0,
        state: &x,
        x0_hat: None,
        noise_scale: s.sigma_max(),
        weights: &weights,
    })?;

    for t in (1..=s.steps()).rev() {
        let x0_hat = denoiser.denoise(&x, y0, &g_y0, t)?;
        x.ensure_same_shape(&x0_hat, "denoiser output")?;
        let c = reverse_coefficients(s, t)?;
        let mean = if t == 1 {
            x0_hat.clone()
        } else {
            Image::new(
                x.height(),
                x.width(),
                x.channels(),
                reverse_mean(&x, &x0_hat, &c)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect(),
            )?
        };
        let next = reverse_step(&x, &x0_hat, s, &weights, t, &mut step_rng)?;
        observe(&StepTrace {
            t,
            is_prior: false,
            mean: &mean,
            state: &next,
            x0_hat: Some(&x0_hat),
            noise_scale: if t == 1 { 0.0 } else { c.noise_scale },
            weights: &weights,
        })?;
        x = next;
    }
    Ok(ChainOutput {
        image: x.clamp01(),
        g_y0,
        uncertainty,
        weights,
    })
}

pub fn run_reverse_chain(
    y0: &Image,
    predictor: &dyn SrPredictor,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    weighting: &WeightingParams,
    rng: &RngState,
) -> Result<Image> {
    Ok(
        run_reverse_chain_observed(y0, predictor, denoiser, s, weighting, rng, &mut |_| Ok(()))?
            .image,
    )
}

/// Observer that writes each state as `step_<kind>_<t>.png` (clamped) into
/// `dir` and collects [`StepStats`].
#[derive(Debug)]
pub struct StepDumper {
    dir: Option<PathBuf>,
    pub stats: Vec<StepStats>,
}

impl StepDumper {
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            stats: Vec::new(),
        })
    }

    pub fn record(&mut self, tr: &StepTrace<'_>) -> Result<()> {
        let st = StepStats::from_trace(tr);
        if let Some(d) = &self.dir {
            tr.state
                .write_png(d.join(format!("step_{}_{}.png", st.kind, tr.t)))?;
        }
        self.stats.push(st);
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for s in &self.stats {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::oracle_denoiser;
    use crate::predictor::{IdentityPredictor, SmoothingPredictor};
    use crate::schedule::{build_schedule, ScheduleParams};

    fn sched() -> NoiseSchedule {
        ScheduleParams::default().build().unwrap()
    }

    fn rand_img(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = RngState::new(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.uniform() as f32).unwrap()
    }

    fn moments(img: &Image, center: f64) -> (f64, f64) {
        let n = img.data().len() as f64;
        let m = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = img
            .data()
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / n;
        (m - center, v.sqrt())
    }

    #[test]
    fn zero_kappa_forward_is_deterministic() {
        let s = sched().with_kappa(0.0).unwrap();
        let (xp, x0, y0) = (
            rand_img(4, 4, 3, 1),
            rand_img(4, 4, 3, 2),
            rand_img(4, 4, 3, 3),
        );
        let w = WeightMap::uniform(4, 4, 0.7).unwrap();
        let out = forward_step(&xp, &x0, &y0, &s, &w, 2, &mut RngState::new(0)).unwrap();
        let a = s.alpha(2).unwrap();
        for i in 0..out.data().len() {
            let expect = xp.data()[i] as f64 + a * (y0.data()[i] as f64 - x0.data()[i] as f64);
            assert!((out.data()[i] as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_step_scalar_moments() {
        // alpha_1 = eta_1 = 0.25
        let s = build_schedule(1, 2.0, 0.1, 0.25, 1.0).unwrap();
        let n = 500;
        let w = WeightMap::uniform(n, n, 0.5).unwrap();
        let out = forward_step(
            &Image::filled(n, n, 1, 0.2).unwrap(),
            &Image::filled(n, n, 1, 0.2).unwrap(),
            &Image::filled(n, n, 1, 0.6).unwrap(),
            &s,
            &w,
            1,
            &mut RngState::new(4),
        )
        .unwrap();
        let (dm, sd) = moments(&out, 0.3);
        let k = (n * n) as f64;
        assert!(dm.abs() < 4.0 * 0.5 / k.sqrt(), "mean off by {dm}");
        assert!((sd - 0.5).abs() / 0.5 < 0.01, "std {sd}");
    }

    #[test]
    fn marginal_at_zero_and_shapes() {
        let s = sched();
        let (x0, y0) = (rand_img(4, 6, 3, 1), rand_img(4, 6, 3, 2));
        let w = WeightMap::uniform(4, 6, 1.0).unwrap();
        assert_eq!(
            sample_marginal(&x0, &y0, &s, &w, 0, &mut RngState::new(0)).unwrap(),
            x0
        );
        assert!(sample_marginal(&x0, &y0, &s, &w, 6, &mut RngState::new(0)).is_err());
        let bad = WeightMap::uniform(4, 5, 1.0).unwrap();
        assert!(sample_marginal(&x0, &y0, &s, &bad, 2, &mut RngState::new(0)).is_err());
        assert!(forward_step(
            &x0,
            &x0,
            &rand_img(4, 6, 1, 3),
            &s,
            &w,
            1,
            &mut RngState::new(0)
        )
        .is_err());
        assert!(reverse_step(&x0, &x0, &s, &w, 0, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn initial_state_with_zero_kappa_is_y0() {
        let s = sched().with_kappa(0.0).unwrap();
        let y0 = rand_img(5, 5, 3, 1);
        let w = WeightMap::uniform(5, 5, 0.4).unwrap();
        assert_eq!(
            sample_initial_state(&y0, &s, &w, &mut RngState::new(3)).unwrap(),
            y0
        );
    }

    #[test]
    fn reverse_coefficients_scalar_case() {
        // eta_1 = 0.2, eta_2 = 0.6
        let s = build_schedule(2, 2.0, 0.2, 0.6, 1.0).unwrap();
        let c = reverse_coefficients(&s, 2).unwrap();
        assert!((c.x_t_coef - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.x0_coef - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.noise_scale - 2.0 * ((0.2 / 0.6) * 0.4f64).sqrt()).abs() < 1e-12);
        assert!((c.noise_scale - 0.7303).abs() < 1e-4);
    }

    #[test]
    fn first_step_ignores_x_t_and_rng() {
        let s = sched();
        let x0_hat = rand_img(6, 6, 3, 1);
        let w = WeightMap::uniform(6, 6, 1.0).unwrap();
        let mut rng = RngState::new(9);
        for seed in 0..20 {
            let x_t = rand_img(6, 6, 3, 100 + seed);
            assert_eq!(
                reverse_step(&x_t, &x0_hat, &s, &w, 1, &mut rng).unwrap(),
                x0_hat
            );
        }
    }

    #[test]
    fn oracle_chain_recovers_x0_and_is_deterministic() {
        let s = sched();
        let x0 = rand_img(16, 16, 3, 5);
        let y0 = crate::degradation::gaussian_blur(&x0, 1.0).unwrap();
        let p = SmoothingPredictor::new(2.0).unwrap();
        let mut d = oracle_denoiser(x0.clone(), 0.0, RngState::new(0)).unwrap();
        let out = run_reverse_chain(
            &y0,
            &p,
            &mut d,
            &s,
            &WeightingParams::default(),
            &RngState::new(1),
        )
        .unwrap();
        assert_eq!(out, x0.clamp01());

        let mut ident = |x: &Image, _: &Image, _: &Image, _: usize| Ok(x.clone());
        let a = run_reverse_chain(
            &y0,
            &p,
            &mut ident,
            &s,
            &WeightingParams::default(),
            &RngState::new(2),
        )
        .unwrap();
        let b = run_reverse_chain(
            &y0,
            &p,
            &mut ident,
            &s,
            &WeightingParams::default(),
            &RngState::new(2),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_kappa_identity_denoiser_smoke() {
        let s = sched().with_kappa(0.0).unwrap();
        let y0 = rand_img(8, 8, 3, 2);
        let mut ident = |x: &Image, _: &Image, _: &Image, _: usize| Ok(x.clone());
        let out = run_reverse_chain(
            &y0,
            &IdentityPredictor,
            &mut ident,
            &s,
            &WeightingParams::default(),
            &RngState::new(0),
        )
        .unwrap();
        assert_eq!(out.shape(), (8, 8, 3));
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out, y0.clamp01());
    }

    #[test]
    fn denoiser_shape_mismatch_is_an_error() {
        let s = sched();
        let y0 = rand_img(8, 8, 3, 2);
        let mut bad = |_: &Image, _: &Image, _: &Image, _: usize| Image::zeros(4, 4, 3);
        assert!(run_reverse_chain(
            &y0,
            &IdentityPredictor,
            &mut bad,
            &s,
            &WeightingParams::default(),
            &RngState::new(0)
        )
        .is_err());
    }

    #[test]
    fn dumper_records_every_draw() {
        let dir = tempfile::tempdir().unwrap();
        let s = sched();
        let y0 = rand_img(8, 8, 3, 2);
        let mut ident = |x: &Image, _: &Image, _: &Image, _: usize| Ok(x.clone());
        let mut dump = StepDumper::new(Some(dir.path())).unwrap();
        run_reverse_chain_observed(
            &y0,
            &IdentityPredictor,
            &mut ident,
            &s,
            &WeightingParams::isotropic(),
            &RngState::new(0),
            &mut |tr| dump.record(tr),
        )
        .unwrap();
        assert_eq!(dump.stats.len(), s.steps() + 1);
        assert_eq!(dump.stats[0].kind, "prior");
        assert_eq!(dump.stats.last().unwrap().injected_std, 0.0);
        assert!(dir.path().join("step_prior_5.png").exists());
        assert!(dir.path().join("step_reverse_1.png").exists());
        let csv_path = dir.path().join("steps.csv");
        dump.write_csv(&csv_path).unwrap();
        let back: Vec<StepStats> = csv::Reader::from_path(&csv_path)
            .unwrap()
            .deserialize()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(back.len(), dump.stats.len());
        assert_eq!(back[0].t, 5);
    }
}
