//! Brute-force posterior over `x_{t-1}` for scalar states.
//!
//! The unnormalized density is the product of the one-step forward density
//! `N(x_t; x_{t-1} + alpha_t (y0 - x0), (kappa w)^2 alpha_t)` and the marginal
//! `N(x_{t-1}; x0 + eta_{t-1} (y0 - x0), (kappa w)^2 eta_{t-1})`, evaluated on
//! a grid and normalized with the trapezoid rule. Nothing here uses the
//! closed-form reverse transition.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Grid layout. With `range = None` the grid is placed automatically: a
/// wide pilot grid over both factors locates the posterior, then the final
/// grid covers `mean ± span_sigmas * std` of that pilot estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub span_sigmas: f64,
    pub range: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 8193,
            span_sigmas: 12.0,
            range: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub dx: f64,
    /// Relative gap between trapezoid and Simpson integrals of the
    /// unnormalized density.
    pub normalization_error: f64,
    pub coarse: bool,
}

const MIN_POINTS: usize = 4096;
const PILOT_POINTS: usize = 1 << 16;

fn trapezoid(f: &[f64], dx: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..f.len() - 1].iter().sum();
    dx * (inner + 0.5 * (f[0] + f[f.len() - 1]))
}

/// Composite Simpson on an odd number of points; falls back to dropping
/// the last interval with a trapezoid when even.
fn simpson(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    if n < 3 {
        return trapezoid(f, dx);
    }
    let m = if n % 2 == 1 { n } else { n - 1 };
    let mut s = f[0] + f[m - 1];
    for (i, v) in f[1..m - 1].iter().enumerate() {
        s += if i % 2 == 0 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = s * dx / 3.0;
    if m < n {
        total += 0.5 * dx * (f[n - 2] + f[n - 1]);
    }
    total
}

fn linspace(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let dx = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + i as f64 * dx).collect(), dx)
}

struct Factors {
    /// forward density as a function of `x_{t-1}`: centered at `x_t - shift`
    fwd_center: f64,
    fwd_std: f64,
    marg_center: f64,
    marg_std: f64,
}

impl Factors {
    fn log_density(&self, x: f64) -> f64 {
        let a = (x - self.fwd_center) / self.fwd_std;
        let b = (x - self.marg_center) / self.marg_std;
        -0.5 * (a * a + b * b)
    }

    /// Unnormalized density, rescaled so its maximum on the grid is 1.
    fn evaluate(&self, xs: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = xs.iter().map(|&x| self.log_density(x)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - top).exp()).collect()
    }
}

fn grid_moments(xs: &[f64], p: &[f64], dx: f64) -> (f64, f64) {
    let z = trapezoid(p, dx);
    let xp: Vec<f64> = xs.iter().zip(p).map(|(x, v)| x * v).collect();
    let mean = trapezoid(&xp, dx) / z;
    let vp: Vec<f64> = xs
        .iter()
        .zip(p)
        .map(|(x, v)| (x - mean).powi(2) * v)
        .collect();
    (mean, (trapezoid(&vp, dx) / z).sqrt())
}

#[allow(clippy::too_many_arguments)]
pub fn bayes_grid_posterior(
    x_t: f64,
    x0: f64,
    y0: f64,
    s: &NoiseSchedule,
    w: f64,
    t: usize,
    grid: &GridSpec,
) -> Result<GridPosterior> {
    if t < 2 || t > s.steps() {
        return Err(Error::StepOutOfRange {
            t,
            lo: 2,
            hi: s.steps(),
        });
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight must be > 0, got {w}"
        )));
    }
    if grid.points < MIN_POINTS {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least {MIN_POINTS} points, got {}",
            grid.points
        )));
    }
    let (alpha, eta_prev) = (s.alpha(t)?, s.eta(t - 1)?);
    let kw = s.kappa() * w;
    let f = Factors {
        fwd_center: x_t - alpha * (y0 - x0),
        fwd_std: kw * alpha.sqrt(),
        marg_center: x0 + eta_prev * (y0 - x0),
        marg_std: kw * eta_prev.sqrt(),
    };

    let (lo, hi) = match grid.range {
        Some(r) => r,
        None => {
            let reach = 12.0;
            let lo = (f.fwd_center - reach * f.fwd_std).min(f.marg_center - reach * f.marg_std);
            let hi = (f.fwd_center + reach * f.fwd_std).max(f.marg_center + reach * f.marg_std);
            let (xs, dx) = linspace(lo, hi, PILOT_POINTS);
            let (m, sd) = grid_moments(&xs, &f.evaluate(&xs), dx);
            (m - grid.span_sigmas * sd, m + grid.span_sigmas * sd)
        }
    };
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "empty grid range [{lo}, {hi}]"
        )));
    }
    let (xs, dx) = linspace(lo, hi, grid.points);
    let raw = f.evaluate(&xs);
    let (_, sd) = grid_moments(&xs, &raw, dx);
    if hi - lo < 8.0 * sd {
        return Err(Error::InvalidParameter(format!(
            "grid spans {:.3e}, less than 8 posterior stds ({:.3e})",
            hi - lo,
            8.0 * sd
        )));
    }
    let z = trapezoid(&raw, dx);
    let normalization_error = ((z - simpson(&raw, dx)) / z).abs();
    let coarse = normalization_error > 1e-6;
    if coarse {
        log::warn!("posterior grid too coarse: normalization error {normalization_error:.2e}");
    }
    Ok(GridPosterior {
        density: raw.iter().map(|v| v / z).collect(),
        xs,
        dx,
        normalization_error,
        coarse,
    })
}

impl GridPosterior {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, self.dx)
    }

    pub fn mean(&self) -> f64 {
        grid_moments(&self.xs, &self.density, self.dx).0
    }

    pub fn std(&self) -> f64 {
        grid_moments(&self.xs, &self.density, self.dx).1
    }

    /// Largest single-cell probability mass.
    pub fn max_cell_mass(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max) * self.dx
    }

    /// Total-variation distance to a density `q` evaluated on the same grid.
    pub fn tv_distance_to(&self, q: impl Fn(f64) -> f64) -> f64 {
        let qs: Vec<f64> = self.xs.iter().map(|&x| q(x)).collect();
        tv_distance(&self.density, &qs, self.dx)
    }
}

/// `0.5 * integral |p - q|` by the trapezoid rule on a shared uniform grid.
pub fn tv_distance(p: &[f64], q: &[f64], dx: f64) -> f64 {
    let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    0.5 * trapezoid(&d, dx)
}

pub fn gaussian_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}
