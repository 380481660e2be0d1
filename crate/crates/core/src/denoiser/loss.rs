//! Training objectives with analytic gradients.
//!
//! The mixed objective is pixel MSE plus `lambda` times an edge term: the
//! mean absolute difference between Sobel gradient magnitudes of the
//! prediction and the target. The edge term stands in for a learned
//! perceptual distance: it penalizes blurred structure and is cheap to
//! differentiate by hand.

use ndarray::Array3;

use super::nn::{image_to_tensor, real, tensor_to_image, Real};
use crate::error::{Error, Result};
use crate::image::Image;

/// Smoothing inside the gradient-magnitude square root.
const MAG_EPS: f64 = 1e-6;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    pub perceptual: f64,
}

fn check_dims<F: Real>(a: &Array3<F>, b: &Array3<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "loss inputs {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Sobel responses `(gx, gy)` and the smoothed magnitude, per sample.
fn sobel<F: Real>(x: &Array3<F>) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    let (c, h, w) = x.dim();
    let mut gx = Array3::<f64>::zeros((c, h, w));
    let mut gy = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let (mut sx, mut sy) = (0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let v = x[[
                            ch,
                            clamp_idx(y as isize + dy as isize - 1, h),
                            clamp_idx(xx as isize + dx as isize - 1, w),
                        ]]
                        .to_f64()
                        .unwrap_or(f64::NAN);
                        sx += SOBEL_X[dy][dx] * v;
                        sy += SOBEL_Y[dy][dx] * v;
                    }
                }
                gx[[ch, y, xx]] = sx;
                gy[[ch, y, xx]] = sy;
            }
        }
    }
    let mag = ndarray::Zip::from(&gx)
        .and(&gy)
        .map_collect(|&a, &b| (a * a + b * b + MAG_EPS * MAG_EPS).sqrt());
    (gx, gy, mag)
}

/// Mixed loss and its gradient with respect to `pred`.
pub fn mixed_loss_tensor<F: Real>(
    pred: &Array3<F>,
    target: &Array3<F>,
    lambda: f64,
) -> Result<(LossValue, Array3<F>)> {
    check_dims(pred, target)?;
    let (c, h, w) = pred.dim();
    let n = (c * h * w) as f64;

    let mut grad = Array3::<f64>::zeros((c, h, w));
    let mut mse = 0.0;
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let d = p.to_f64().unwrap_or(f64::NAN) - t.to_f64().unwrap_or(f64::NAN);
            mse += d * d;
            *g = 2.0 * d / n;
        });
    mse /= n;

    let mut perceptual = 0.0;
    if lambda != 0.0 {
        let (gx, gy, mag_p) = sobel(pred);
        let (_, _, mag_t) = sobel(target);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let diff = mag_p[[ch, y, x]] - mag_t[[ch, y, x]];
                    perceptual += diff.abs();
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    if sign == 0.0 {
                        continue;
                    }
                    let m = mag_p[[ch, y, x]];
                    let (ux, uy) = (gx[[ch, y, x]] / m, gy[[ch, y, x]] / m);
                    let scale = lambda * sign / n;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let k = ux * SOBEL_X[dy][dx] + uy * SOBEL_Y[dy][dx];
                            if k != 0.0 {
                                grad[[
                                    ch,
                                    clamp_idx(y as isize + dy as isize - 1, h),
                                    clamp_idx(x as isize + dx as isize - 1, w),
                                ]] += scale * k;
                            }
                        }
                    }
                }
            }
        }
        perceptual /= n;
    }
    let value = LossValue {
        total: mse + lambda * perceptual,
        mse,
        perceptual,
    };
    Ok((value, grad.mapv(real::<F>)))
}

/// Mean absolute error and its (sub)gradient.
pub fn l1_loss_tensor<F: Real>(pred: &Array3<F>, target: &Array3<F>) -> Result<(f64, Array3<F>)> {
    check_dims(pred, target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = ndarray::Zip::from(pred).and(target).map_collect(|&p, &t| {
        let d = p.to_f64().unwrap_or(f64::NAN) - t.to_f64().unwrap_or(f64::NAN);
        total += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        real::<F>(s / n)
    });
    Ok((total / n, grad))
}

/// Image-level mixed loss: returns the loss value and `d loss / d pred`.
pub fn mixed_loss(pred: &Image, x0: &Image, lambda: f64) -> Result<(LossValue, Image)> {
    pred.ensure_same_shape(x0, "mixed_loss")?;
    let (value, grad) =
        mixed_loss_tensor::<f64>(&image_to_tensor(pred), &image_to_tensor(x0), lambda)?;
    Ok((value, tensor_to_image(&grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn zero_at_target() {
        let mut rng = RngState::new(1);
        let img = Image::from_fn(8, 8, 3, |_, _, _| rng.uniform() as f32).unwrap();
        let (v, g) = mixed_loss(&img, &img, 1.0).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pure_mse_of_constant_offset() {
        let x0 = Image::filled(8, 8, 1, 0.5).unwrap();
        let pred = Image::filled(8, 8, 1, 0.6).unwrap();
        let (v, _) = mixed_loss(&pred, &x0, 0.0).unwrap();
        assert!((v.total - 0.01).abs() < 1e-8);
        assert_eq!(v.perceptual, 0.0);
        // a constant offset has no edges, so the edge term stays ~0 too
        let (v, _) = mixed_loss(&pred, &x0, 1.0).unwrap();
        assert!(v.perceptual < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let a = Image::zeros(4, 4, 1).unwrap();
        let b = Image::zeros(4, 4, 3).unwrap();
        assert!(mixed_loss(&a, &b, 1.0).is_err());
    }

    #[test]
    fn edge_term_penalizes_blur() {
        let sharp = Image::from_fn(8, 8, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        let soft = Image::from_fn(8, 8, 1, |_, x, _| x as f32 / 7.0).unwrap();
        let (v, _) = mixed_loss(&soft, &sharp, 1.0).unwrap();
        assert!(v.perceptual > 0.1);
    }

    #[test]
    fn l1_value_and_gradient() {
        let p = Array3::from_shape_vec((1, 1, 4), vec![0.0, 1.0, 0.5, 0.2]).unwrap();
        let t = Array3::from_shape_vec((1, 1, 4), vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let (v, g) = l1_loss_tensor::<f64>(&p, &t).unwrap();
        assert!((v - (0.5 + 0.5 + 0.0 + 0.3) / 4.0).abs() < 1e-12);
        assert_eq!(g.as_slice().unwrap(), &[-0.25, 0.25, 0.0, -0.25]);
    }
}
