//! Denoisers `f(x_t, y0, g(y0), t) -> x0_hat`: a ground-truth oracle for
//! testing the sampler, and a tiny trainable convolutional network.

pub mod container;
pub mod loss;
pub mod net;
pub mod nn;
pub mod train;

pub use container::{load_model, save_model};
pub use loss::{mixed_loss, LossValue};
pub use net::{ArchConfig, Network, ResidualBase, Role, TinyNetModel};
pub use train::{
    train, train_predictor, Optimizer, TrainConfig, TrainLogRow, TrainOutcome, TrainPair,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngState;

pub trait Denoiser {
    /// Predicts `x0` from the noisy state and the conditioning images.
    fn denoise(&mut self, x_t: &Image, y0: &Image, g_y0: &Image, t: usize) -> Result<Image>;
}

impl<F> Denoiser for F
where
    F: FnMut(&Image, &Image, &Image, usize) -> Result<Image>,
{
    fn denoise(&mut self, x_t: &Image, y0: &Image, g_y0: &Image, t: usize) -> Result<Image> {
        self(x_t, y0, g_y0, t)
    }
}

/// Returns the true `x0`, optionally perturbed by fresh Gaussian noise on
/// every call.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    x0: Image,
    error_std: f64,
    rng: RngState,
}

pub fn oracle_denoiser(x0: Image, error_std: f64, rng: RngState) -> Result<OracleDenoiser> {
    if !(error_std >= 0.0 && error_std.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "error_std must be >= 0, got {error_std}"
        )));
    }
    Ok(OracleDenoiser { x0, error_std, rng })
}

impl Denoiser for OracleDenoiser {
    fn denoise(&mut self, x_t: &Image, _y0: &Image, _g_y0: &Image, _t: usize) -> Result<Image> {
        x_t.ensure_same_shape(&self.x0, "oracle denoiser")?;
        if self.error_std == 0.0 {
            return Ok(self.x0.clone());
        }
        let s = self.error_std;
        let rng = &mut self.rng;
        Ok(self.x0.map(|v| (v as f64 + s * rng.normal()) as f32))
    }
}

/// A trained (or freshly initialized) tiny network used as a denoiser.
#[derive(Debug, Clone)]
pub struct TinyNetDenoiser {
    net: Network<f32>,
}

impl TinyNetDenoiser {
    pub fn new(model: &TinyNetModel) -> Result<Self> {
        if model.role != Role::Denoiser {
            return Err(Error::ModelMismatch(format!(
                "expected a denoiser model, got role {:?}",
                model.role
            )));
        }
        Ok(Self {
            net: Network::from_model(model)?,
        })
    }

    pub fn predict(&self, x_t: &Image, y0: &Image, g_y0: &Image, t: usize) -> Result<Image> {
        x_t.ensure_same_shape(y0, "denoiser inputs")?;
        x_t.ensure_same_shape(g_y0, "denoiser inputs")?;
        let inputs = [
            nn::image_to_tensor::<f32>(x_t),
            nn::image_to_tensor::<f32>(y0),
            nn::image_to_tensor::<f32>(g_y0),
        ];
        let refs: Vec<_> = inputs.iter().collect();
        nn::tensor_to_image(&self.net.predict(&refs, t, None)?)
    }
}

impl Denoiser for TinyNetDenoiser {
    fn denoise(&mut self, x_t: &Image, y0: &Image, g_y0: &Image, t: usize) -> Result<Image> {
        self.predict(x_t, y0, g_y0, t)
    }
}

/// One forward pass of `model` on `(x_t, y0, g_y0)` at step `t`.
pub fn tinynet_forward(
    model: &TinyNetModel,
    x_t: &Image,
    y0: &Image,
    g_y0: &Image,
    t: usize,
) -> Result<Image> {
    TinyNetDenoiser::new(model)?.predict(x_t, y0, g_y0, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_img(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = RngState::new(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.uniform() as f32).unwrap()
    }

    #[test]
    fn perfect_oracle_returns_x0() {
        let x0 = rand_img(4, 4, 3, 1);
        let mut d = oracle_denoiser(x0.clone(), 0.0, RngState::new(0)).unwrap();
        for t in 1..4 {
            assert_eq!(d.denoise(&x0, &x0, &x0, t).unwrap(), x0);
        }
        assert!(oracle_denoiser(x0, -1.0, RngState::new(0)).is_err());
    }

    #[test]
    fn noisy_oracle_has_requested_spread() {
        let x0 = Image::filled(64, 64, 1, 0.5).unwrap();
        let mut d = oracle_denoiser(x0.clone(), 0.1, RngState::new(5)).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for _ in 0..25 {
            let out = d.denoise(&x0, &x0, &x0, 1).unwrap();
            for &v in out.data() {
                let e = v as f64 - 0.5;
                sum += e;
                sq += e * e;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let std = (sq / n - mean * mean).sqrt();
        assert!(
            (std - 0.1).abs() < 4.0 * 0.1 / (2.0 * n).sqrt() + 1e-3,
            "std {std}"
        );
    }

    #[test]
    fn zero_model_returns_its_residual_base() {
        let (x, y, g) = (
            rand_img(8, 8, 3, 1),
            rand_img(8, 8, 3, 2),
            rand_img(8, 8, 3, 3),
        );
        for (base, want) in [
            (ResidualBase::State, &x),
            (ResidualBase::Condition, &y),
            (ResidualBase::Prediction, &g),
        ] {
            let arch = ArchConfig {
                residual: base,
                ..ArchConfig::default()
            };
            let m = TinyNetModel::zeros(Role::Denoiser, &arch, 5).unwrap();
            assert_eq!(&tinynet_forward(&m, &x, &y, &g, 3).unwrap(), want);
        }
        let bad = ArchConfig {
            residual: ResidualBase::State,
            ..ArchConfig::default()
        };
        assert!(TinyNetModel::zeros(Role::Predictor, &bad, 1).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_fully_convolutional() {
        let arch = ArchConfig {
            hidden: 8,
            ..ArchConfig::default()
        };
        let mut rng = RngState::new(9);
        let mut m = TinyNetModel::init(Role::Denoiser, &arch, 5, &mut rng).unwrap();
        for p in m.params.iter_mut() {
            *p += 0.01 * rng.normal() as f32;
        }
        let d = TinyNetDenoiser::new(&m).unwrap();
        for (h, w) in [(4, 6), (8, 12), (10, 2)] {
            let (x, y, g) = (
                rand_img(h, w, 3, 1),
                rand_img(h, w, 3, 2),
                rand_img(h, w, 3, 3),
            );
            let a = d.predict(&x, &y, &g, 2).unwrap();
            let b = d.predict(&x, &y, &g, 2).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), (h, w, 3));
            let (x2, y2, g2) = (
                rand_img(2 * h, 2 * w, 3, 1),
                rand_img(2 * h, 2 * w, 3, 2),
                rand_img(2 * h, 2 * w, 3, 3),
            );
            assert_eq!(
                d.predict(&x2, &y2, &g2, 2).unwrap().shape(),
                (2 * h, 2 * w, 3)
            );
        }
    }

    #[test]
    fn shape_and_role_mismatch() {
        let m = TinyNetModel::zeros(Role::Denoiser, &ArchConfig::default(), 5).unwrap();
        let (x, y) = (rand_img(8, 8, 3, 1), rand_img(8, 6, 3, 2));
        assert!(tinynet_forward(&m, &x, &y, &x, 1).is_err());
        let odd = rand_img(7, 8, 3, 1);
        assert!(tinynet_forward(&m, &odd, &odd, &odd, 1).is_err());
        let gray = rand_img(8, 8, 1, 1);
        assert!(tinynet_forward(&m, &gray, &gray, &gray, 1).is_err());
        let p = TinyNetModel::zeros(Role::Predictor, &ArchConfig::default(), 1).unwrap();
        assert!(TinyNetDenoiser::new(&p).is_err());
    }
}
