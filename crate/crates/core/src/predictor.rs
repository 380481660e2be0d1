//! Auxiliary SR predictors `g(y0)`. The output serves both as extra
//! conditioning for the denoiser and as the source of the uncertainty map.

use crate::degradation::gaussian_blur;
use crate::denoiser::net::{Network, Role, TinyNetModel};
use crate::denoiser::nn;
use crate::error::{Error, Result};
use crate::image::Image;

pub trait SrPredictor {
    /// Same-shape estimate of the HR image from the upsampled input.
    fn predict(&self, y0: &Image) -> Result<Image>;
}

/// `g(y) = y`. Gives zero uncertainty everywhere, hence the floor weight.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPredictor;

impl SrPredictor for IdentityPredictor {
    fn predict(&self, y0: &Image) -> Result<Image> {
        Ok(y0.clone())
    }
}

/// Gaussian blur with `sigma = radius / 2`. The residual `|g(y) - y|` is
/// large on edges and texture and vanishes on flat regions.
#[derive(Debug, Clone, Copy)]
pub struct SmoothingPredictor {
    radius: f64,
}

impl SmoothingPredictor {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 1.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothing radius must be >= 1, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl SrPredictor for SmoothingPredictor {
    fn predict(&self, y0: &Image) -> Result<Image> {
        gaussian_blur(y0, self.radius / 2.0)
    }
}

/// Tiny network trained as a one-step `y0 -> x0` regressor.
#[derive(Debug, Clone)]
pub struct LearnedPredictor {
    net: Network<f32>,
}

impl LearnedPredictor {
    pub fn new(model: &TinyNetModel) -> Result<Self> {
        if model.role != Role::Predictor {
            return Err(Error::ModelMismatch(format!(
                "expected a predictor model, got role {:?}",
                model.role
            )));
        }
        Ok(Self {
            net: Network::from_model(model)?,
        })
    }
}

impl SrPredictor for LearnedPredictor {
    fn predict(&self, y0: &Image) -> Result<Image> {
        let x = nn::image_to_tensor::<f32>(y0);
        nn::tensor_to_image(&self.net.predict(&[&x], 1, None)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::net::ArchConfig;
    use crate::rng::RngState;
    use crate::uncertainty::{estimate_uncertainty, weight_map_for, WeightingParams};

    #[test]
    fn identity_gives_floor_weights() {
        let mut rng = RngState::new(1);
        let y = Image::from_fn(6, 5, 3, |_, _, _| rng.uniform() as f32).unwrap();
        let g = IdentityPredictor.predict(&y).unwrap();
        assert_eq!(g, y);
        let (u, w) = weight_map_for(&y, &g, &WeightingParams::default()).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert!(w.values().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn smoothing_keeps_constants() {
        let y = Image::filled(9, 9, 3, 0.3).unwrap();
        let p = SmoothingPredictor::new(3.0).unwrap();
        let u = estimate_uncertainty(&y, &p.predict(&y).unwrap()).unwrap();
        assert!(u.max() < 1e-7);
        assert!(SmoothingPredictor::new(0.5).is_err());
    }

    #[test]
    fn smoothing_residual_peaks_at_edge() {
        // step between columns 9 and 10; sigma = 1, kernel radius 3
        let y = Image::from_fn(4, 20, 1, |_, x, _| if x < 10 { 0.0 } else { 1.0 }).unwrap();
        let p = SmoothingPredictor::new(2.0).unwrap();
        let g = p.predict(&y).unwrap();
        let k = crate::degradation::gaussian_kernel(1.0);
        // analytic: blurred step at column x = sum of taps landing on x' >= 10
        for x in 0..20isize {
            let expect: f64 = (-3..=3isize)
                .filter(|d| (x + d).clamp(0, 19) >= 10)
                .map(|d| k[(d + 3) as usize])
                .sum();
            assert!((g.get(1, x as usize, 0) as f64 - expect).abs() < 1e-6);
        }
        let res: Vec<f64> = (0..20)
            .map(|x| (g.get(1, x, 0) - y.get(1, x, 0)).abs() as f64)
            .collect();
        let peak = res.iter().cloned().fold(0.0, f64::max);
        assert!(res[9] == peak || res[10] == peak);
        assert_eq!(res[0], 0.0);
        assert_eq!(res[19], 0.0);
    }

    #[test]
    fn smoothing_residual_on_noise_is_dense() {
        for seed in 0..5 {
            let mut rng = RngState::new(seed);
            let y = Image::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32).unwrap();
            let g = SmoothingPredictor::new(2.0).unwrap().predict(&y).unwrap();
            let u = estimate_uncertainty(&y, &g).unwrap();
            let nonzero = u.values().iter().filter(|&&v| v > 1e-6).count();
            assert!(nonzero as f64 > 0.95 * 256.0);
        }
    }

    #[test]
    fn learned_predictor_contract() {
        let arch = ArchConfig {
            hidden: 4,
            ..ArchConfig::default()
        };
        let zero = TinyNetModel::zeros(Role::Predictor, &arch, 1).unwrap();
        let p = LearnedPredictor::new(&zero).unwrap();
        let y = Image::filled(8, 8, 3, 0.25).unwrap();
        let a = p.predict(&y).unwrap();
        assert_eq!(a, y);
        assert_eq!(p.predict(&y).unwrap(), a);
        let d = TinyNetModel::zeros(Role::Denoiser, &arch, 5).unwrap();
        assert!(LearnedPredictor::new(&d).is_err());
    }
}
