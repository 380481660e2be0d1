//! Paired-data synthesis: blur, area downsampling, Gaussian noise and a
//! JPEG-style block quantizer, followed by a bicubic upsample back to the
//! HR grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::bicubic_resize;
use crate::rng::RngState;

/// Normalized sampled Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with clamped borders; `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "blur sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = img.shape();
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * img.get_clamped(y as isize, x as isize + j as isize - r, ch) as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    Image::new(h, w, c, out)
}

/// Area downsampling: each output pixel is the mean of a `scale`×`scale` block.
pub fn downsample(img: &Image, scale: usize) -> Result<Image> {
    if scale == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    let (h, w, c) = img.shape();
    if h % scale != 0 {
        return Err(Error::NotDivisible {
            axis: "height",
            len: h,
            factor: scale,
        });
    }
    if w % scale != 0 {
        return Err(Error::NotDivisible {
            axis: "width",
            len: w,
            factor: scale,
        });
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    let norm = 1.0 / (scale * scale) as f64;
    Image::from_fn(h / scale, w / scale, c, |y, x, ch| {
        let mut acc = 0.0f64;
        for dy in 0..scale {
            for dx in 0..scale {
                acc += img.get(y * scale + dy, x * scale + dx, ch) as f64;
            }
        }
        (acc * norm) as f32
    })
}

/// Adds i.i.d. `N(0, sigma^2)` noise without clamping.
pub fn add_noise(img: &Image, sigma: f64, rng: &mut RngState) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    Ok(img.map(|v| (v as f64 + sigma * rng.normal()) as f32))
}

/// Standard JPEG luminance quantization table (row-major, natural order).
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance table scaled for `quality` with the usual IJG rule.
pub fn quant_table(quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidParameter(format!(
            "quality must be in 1..=100, got {quality}"
        )));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &base) in out.iter_mut().zip(LUMA_QUANT.iter()) {
        *o = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(out)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
        }
    }
    m
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Blockwise DCT quantization on 8×8 tiles of each channel, in the 8-bit
/// sample domain. Inputs whose sides are not multiples of 8 are reflect-padded
/// and cropped back.
pub fn jpeg_like(img: &Image, quality: u8) -> Result<Image> {
    let q = quant_table(quality)?;
    let basis = dct_basis();
    let (h, w, c) = img.shape();
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let mut out = vec![0.0f32; h * w * c];
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for ch in 0..c {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let y = reflect((by + i) as isize, h);
                        let x = reflect((bx + j) as isize, w);
                        *v = img.get(y, x, ch) as f64 * 255.0 - 128.0;
                    }
                }
                // forward: F = B_basis * block * B_basis^T
                for u in 0..8 {
                    for j in 0..8 {
                        tmp[u][j] = (0..8).map(|i| basis[u][i] * block[i][j]).sum();
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let coef: f64 = (0..8).map(|j| tmp[u][j] * basis[v][j]).sum();
                        let qv = q[u * 8 + v];
                        block[u][v] = (coef / qv).round() * qv;
                    }
                }
                // inverse: block = B_basis^T * F * B_basis
                for i in 0..8 {
                    for v in 0..8 {
                        tmp[i][v] = (0..8).map(|u| basis[u][i] * block[u][v]).sum();
                    }
                }
                for i in 0..8 {
                    let y = by + i;
                    if y >= h {
                        break;
                    }
                    for j in 0..8 {
                        let x = bx + j;
                        if x >= w {
                            break;
                        }
                        let s: f64 = (0..8).map(|v| tmp[i][v] * basis[v][j]).sum();
                        out[(y * w + x) * c + ch] = ((s + 128.0) / 255.0) as f32;
                    }
                }
            }
        }
    }
    Image::new(h, w, c, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    pub scale: usize,
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub jpeg_enabled: bool,
    pub second_pass: bool,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            blur_sigma: (0.2, 2.0),
            noise_sigma: (0.0, 0.06),
            jpeg_quality: (30, 95),
            jpeg_enabled: true,
            second_pass: false,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    /// Blur-free, noise-free, uncompressed: plain area downsample + bicubic.
    pub fn identity(scale: usize) -> Self {
        Self {
            scale,
            blur_sigma: (0.0, 0.0),
            noise_sigma: (0.0, 0.0),
            jpeg_quality: (100, 100),
            jpeg_enabled: false,
            second_pass: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.scale < 1 {
            return bad("scale must be >= 1".into());
        }
        for (name, (lo, hi)) in [
            ("blur_sigma", self.blur_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!(
                    "{name} range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"
                ));
            }
        }
        let (qlo, qhi) = self.jpeg_quality;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return bad(format!(
                "jpeg_quality must satisfy 1 <= lo <= hi <= 100, got ({qlo}, {qhi})"
            ));
        }
        Ok(())
    }
}

/// Parameters drawn for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawnParams {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub jpeg_quality: Option<u8>,
    pub second_blur_sigma: Option<f64>,
    pub second_noise_sigma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DegradedPair {
    pub lr: Image,
    pub y0: Image,
    pub params: DrawnParams,
}

pub fn degrade_pair(
    hr: &Image,
    cfg: &DegradationConfig,
    rng: &mut RngState,
) -> Result<DegradedPair> {
    cfg.validate()?;
    let (h, w, _) = hr.shape();
    if h % cfg.scale != 0 || w % cfg.scale != 0 {
        return Err(Error::NotDivisible {
            axis: if h % cfg.scale != 0 {
                "height"
            } else {
                "width"
            },
            len: if h % cfg.scale != 0 { h } else { w },
            factor: cfg.scale,
        });
    }
    let blur_sigma = rng.uniform_in(cfg.blur_sigma.0, cfg.blur_sigma.1);
    let noise_sigma = rng.uniform_in(cfg.noise_sigma.0, cfg.noise_sigma.1);
    let jpeg_quality = cfg.jpeg_enabled.then(|| {
        rng.uniform_in(cfg.jpeg_quality.0 as f64, cfg.jpeg_quality.1 as f64)
            .round() as u8
    });
    let second = cfg.second_pass.then(|| {
        (
            0.5 * rng.uniform_in(cfg.blur_sigma.0, cfg.blur_sigma.1),
            0.5 * rng.uniform_in(cfg.noise_sigma.0, cfg.noise_sigma.1),
        )
    });

    let mut noise_rng = rng.split("noise");
    let mut lr = downsample(&gaussian_blur(hr, blur_sigma)?, cfg.scale)?;
    lr = add_noise(&lr, noise_sigma, &mut noise_rng)?;
    if let Some(q) = jpeg_quality {
        lr = jpeg_like(&lr, q)?;
    }
    if let Some((b2, n2)) = second {
        lr = gaussian_blur(&lr, b2)?;
        lr = add_noise(&lr, n2, &mut noise_rng)?;
    }
    let y0 = bicubic_resize(&lr, h, w)?.clamp01();
    Ok(DegradedPair {
        lr,
        y0,
        params: DrawnParams {
            blur_sigma,
            noise_sigma,
            jpeg_quality,
            second_blur_sigma: second.map(|s| s.0),
            second_noise_sigma: second.map(|s| s.1),
        },
    })
}
