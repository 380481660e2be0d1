//! Spatial rearrangement and resizing.
//!
//! `pixel_unshuffle` / `pixel_shuffle` are the lossless space-to-depth pair
//! used in place of a learned encoder/decoder. For factor `r`, input sample
//! `(y, x, c)` lands in output pixel `(y / r, x / r)` at channel
//! `c * r * r + (y % r) * r + (x % r)`.

use crate::error::{Error, Result};
use crate::image::Image;

fn check_factor(r: usize) -> Result<()> {
    if r == 0 {
        Err(Error::InvalidParameter("factor must be >= 1".into()))
    } else {
        Ok(())
    }
}

pub fn pixel_unshuffle(img: &Image, r: usize) -> Result<Image> {
    check_factor(r)?;
    let (h, w, c) = img.shape();
    if h % r != 0 {
        return Err(Error::NotDivisible {
            axis: "height",
            len: h,
            factor: r,
        });
    }
    if w % r != 0 {
        return Err(Error::NotDivisible {
            axis: "width",
            len: w,
            factor: r,
        });
    }
    let (oh, ow, oc) = (h / r, w / r, c * r * r);
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let base_out = ((y / r) * ow + x / r) * oc + (y % r) * r + (x % r);
            let base_in = (y * w + x) * c;
            for ch in 0..c {
                out[base_out + ch * r * r] = src[base_in + ch];
            }
        }
    }
    Image::new(oh, ow, oc, out)
}

pub fn pixel_shuffle(img: &Image, r: usize) -> Result<Image> {
    check_factor(r)?;
    let (h, w, c) = img.shape();
    if c % (r * r) != 0 {
        return Err(Error::NotDivisible {
            axis: "channels",
            len: c,
            factor: r * r,
        });
    }
    let (oh, ow, oc) = (h * r, w * r, c / (r * r));
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..oh {
        for x in 0..ow {
            let base_in = ((y / r) * w + x / r) * c + (y % r) * r + (x % r);
            let base_out = (y * ow + x) * oc;
            for ch in 0..oc {
                out[base_out + ch] = src[base_in + ch * r * r];
            }
        }
    }
    Image::new(oh, ow, oc, out)
}

/// Replicates every pixel into an `r`×`r` block.
pub fn nearest_upsample(img: &Image, r: usize) -> Result<Image> {
    check_factor(r)?;
    let (h, w, c) = img.shape();
    Image::from_fn(h * r, w * r, c, |y, x, ch| img.get(y / r, x / r, ch))
}

/// Catmull-Rom cubic kernel (`a = -0.5`).
#[inline]
pub fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-coordinate source taps and weights along one axis, using
/// half-pixel centers and border clamping.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0f64; 4];
            for k in 0..4 {
                let offset = k as f64 - 1.0;
                let i = (base as isize + k as isize - 1).clamp(0, in_len as isize - 1);
                idx[k] = i as usize;
                wts[k] = cubic_weight(frac - offset);
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resize. Output is not clamped.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "target size must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w, c) = img.shape();
    let xt = axis_taps(w, out_w);
    let yt = axis_taps(h, out_h);

    // Horizontal pass into a 64-bit scratch buffer.
    let mut tmp = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (ox, (idx, wts)) in xt.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * img.get(y, idx[k], ch) as f64;
                }
                tmp[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, (idx, wts)) in yt.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * tmp[(idx[k] * out_w + ox) * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc as f32;
            }
        }
    }
    Image::new(out_h, out_w, c, out)
}
