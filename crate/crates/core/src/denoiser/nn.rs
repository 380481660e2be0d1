//! Tensor-level building blocks with hand-written backward passes.
//!
//! Tensors are `(channels, height, width)` arrays. Every op is generic over
//! the float type so that training can run in `f32` while gradient checks
//! instantiate the same code in `f64`.

use std::fmt::Debug;

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};
use crate::image::Image;

pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn real<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("finite constant")
}

/// `HWC` image → `CHW` tensor.
pub fn image_to_tensor<F: Real>(img: &Image) -> Array3<F> {
    let (h, w, c) = img.shape();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| real::<F>(img.get(y, x, ch) as f64))
}

/// `CHW` tensor → `HWC` image (values rounded to `f32`).
pub fn tensor_to_image<F: Real>(t: &Array3<F>) -> Result<Image> {
    let (c, h, w) = t.dim();
    Image::from_fn(h, w, c, |y, x, ch| {
        t[[ch, y, x]].to_f32().unwrap_or(f32::NAN)
    })
}

/// Space-to-depth with the same channel order as
/// [`crate::resample::pixel_unshuffle`].
pub fn space_to_depth<F: Real>(t: &Array3<F>, r: usize) -> Result<Array3<F>> {
    let (c, h, w) = t.dim();
    if h % r != 0 || w % r != 0 {
        return Err(Error::NotDivisible {
            axis: if h % r != 0 { "height" } else { "width" },
            len: if h % r != 0 { h } else { w },
            factor: r,
        });
    }
    Ok(Array3::from_shape_fn(
        (c * r * r, h / r, w / r),
        |(oc, i, j)| {
            let (ch, rem) = (oc / (r * r), oc % (r * r));
            t[[ch, i * r + rem / r, j * r + rem % r]]
        },
    ))
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<F: Real>(t: &Array3<F>, r: usize) -> Result<Array3<F>> {
    let (c, h, w) = t.dim();
    if c % (r * r) != 0 {
        return Err(Error::NotDivisible {
            axis: "channels",
            len: c,
            factor: r * r,
        });
    }
    Ok(Array3::from_shape_fn(
        (c / (r * r), h * r, w * r),
        |(ch, y, x)| t[[ch * r * r + (y % r) * r + x % r, y / r, x / r]],
    ))
}

/// Unfolds `k`×`k` zero-padded neighborhoods into columns:
/// row `(c * k + ky) * k + kx`, column `y * w + x`.
pub fn im2col<F: Real>(input: ArrayView3<F>, k: usize) -> Array2<F> {
    let (c, h, w) = input.dim();
    let pad = (k / 2) as isize;
    let mut cols = Array2::<F>::zeros((c * k * k, h * w));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + x] = input[[ch, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<F: Real>(cols: &Array2<F>, c: usize, h: usize, w: usize, k: usize) -> Array3<F> {
    let pad = (k / 2) as isize;
    let mut out = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let src = cols.row((ch * k + ky) * k + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[[ch, sy as usize, sx as usize]] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 "same" convolution. `weight` is `(out, in * k * k)`.
/// Returns the output and the unfolded input needed by the backward pass.
pub fn conv2d_forward<F: Real>(
    input: ArrayView3<F>,
    weight: &Array2<F>,
    bias: &Array1<F>,
    k: usize,
) -> (Array3<F>, Array2<F>) {
    let (_, h, w) = input.dim();
    let cols = im2col(input, k);
    let mut out = weight.dot(&cols);
    out += &bias.view().insert_axis(Axis(1));
    let out = out
        .into_shape_with_order((weight.nrows(), h, w))
        .expect("conv output shape");
    (out, cols)
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv2d_backward<F: Real>(
    d_out: &Array3<F>,
    cols: &Array2<F>,
    weight: &Array2<F>,
    k: usize,
    in_channels: usize,
    d_weight: &mut Array2<F>,
    d_bias: &mut Array1<F>,
) -> Array3<F> {
    let (oc, h, w) = d_out.dim();
    let d2 = d_out
        .view()
        .into_shape_with_order((oc, h * w))
        .expect("contiguous gradient");
    ndarray::linalg::general_mat_mul(F::one(), &d2, &cols.t(), F::one(), d_weight);
    *d_bias += &d2.sum_axis(Axis(1));
    let d_cols = weight.t().dot(&d2);
    col2im(&d_cols, in_channels, h, w, k)
}

pub fn leaky_relu<F: Real>(x: &Array3<F>, slope: F) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Real>(pre: &Array3<F>, d_out: &Array3<F>, slope: F) -> Array3<F> {
    let mut d = d_out.clone();
    ndarray::Zip::from(&mut d).and(pre).for_each(|g, &p| {
        if p <= F::zero() {
            *g = *g * slope;
        }
    });
    d
}

/// Adds a per-channel bias vector (the timestep embedding row).
pub fn add_channel_bias<F: Real>(x: &mut Array3<F>, bias: ndarray::ArrayView1<F>) {
    for (mut plane, &b) in x.outer_iter_mut().zip(bias.iter()) {
        plane += b;
    }
}

/// Gradient of [`add_channel_bias`] with respect to the bias row.
pub fn channel_bias_backward<F: Real>(d_out: &Array3<F>) -> Array1<F> {
    d_out
        .outer_iter()
        .map(|plane| plane.iter().fold(F::zero(), |a, &b| a + b))
        .collect()
}

pub fn concat_channels<F: Real>(parts: &[&Array3<F>]) -> Array3<F> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("matching spatial dims")
}

/// First `c` channels of a tensor.
pub fn leading_channels<F: Real>(t: &Array3<F>, c: usize) -> Array3<F> {
    t.slice(s![..c, .., ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::{pixel_shuffle, pixel_unshuffle};
    use crate::rng::RngState;

    fn rand3(c: usize, h: usize, w: usize, rng: &mut RngState) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.normal())
    }

    #[test]
    fn tensor_shuffle_matches_image_shuffle() {
        let mut rng = RngState::new(1);
        let img = Image::from_fn(6, 4, 3, |_, _, _| rng.uniform() as f32).unwrap();
        let t: Array3<f32> = image_to_tensor(&img);
        let via_tensor = tensor_to_image(&space_to_depth(&t, 2).unwrap()).unwrap();
        assert_eq!(via_tensor, pixel_unshuffle(&img, 2).unwrap());
        let back =
            tensor_to_image(&depth_to_space(&space_to_depth(&t, 2).unwrap(), 2).unwrap()).unwrap();
        assert_eq!(back, img);
        let up = pixel_shuffle(&pixel_unshuffle(&img, 2).unwrap(), 2).unwrap();
        assert_eq!(up, img);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = RngState::new(2);
        let input = rand3(2, 5, 4, &mut rng);
        let weight = Array2::from_shape_fn((3, 2 * 9), |_| rng.normal());
        let bias = Array1::from_shape_fn(3, |_| rng.normal());
        let (out, _) = conv2d_forward(input.view(), &weight, &bias, 3);
        for o in 0..3 {
            for y in 0..5isize {
                for x in 0..4isize {
                    let mut acc = bias[o];
                    for c in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if (0..5).contains(&sy) && (0..4).contains(&sx) {
                                    acc += weight[[o, (c * 3 + ky as usize) * 3 + kx as usize]]
                                        * input[[c, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((out[[o, y as usize, x as usize]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = RngState::new(3);
        let x = rand3(3, 4, 6, &mut rng);
        let y = Array2::from_shape_fn((27, 24), |_| rng.normal());
        let lhs = (&im2col(x.view(), 3) * &y).sum();
        let rhs = (&x * &col2im(&y, 3, 4, 6, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn leaky_relu_values() {
        let x = Array3::from_shape_vec((1, 1, 3), vec![-2.0, 0.0, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.as_slice().unwrap(), &[-0.2, 0.0, 3.0]);
    }
}
