use crate::error::{Error, Result};
use crate::image::Image;

/// Value reported by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// `10 log10(1 / mse)` with peak 1; infinite for identical images.
pub fn psnr_uncapped(a: &Image, b: &Image) -> Result<f64> {
    Ok(-10.0 * mse(a, b)?.log10())
}

/// PSNR in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_uncapped(a, b)?.min(PSNR_CAP))
}

/// 2-D Gaussian window (11×11, sigma 1.5), normalized. The sampled kernel is
/// truncated to the window, not at `3 sigma`.
fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over all fully-contained 11×11 windows, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = ssim_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let k = win[dy * SSIM_WINDOW + dx];
                        let p = a.get(y + dy, x + dx, ch) as f64;
                        let q = b.get(y + dy, x + dx, ch) as f64;
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                    / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn rand_img(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = RngState::new(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.uniform() as f32).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(8, 8, 3, 0.2).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!(psnr_uncapped(&a, &a).unwrap().is_infinite());
        let b = Image::filled(8, 8, 3, 0.3).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let zero = Image::zeros(4, 4, 1).unwrap();
        let one = Image::filled(4, 4, 1, 1.0).unwrap();
        assert!(psnr(&zero, &one).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_symmetric() {
        let (a, b) = (rand_img(9, 7, 3, 1), rand_img(9, 7, 3, 2));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &rand_img(9, 8, 3, 2)).is_err());
    }

    #[test]
    fn ssim_identity_and_errors() {
        let a = rand_img(16, 20, 3, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(ssim(&rand_img(10, 20, 1, 1), &rand_img(10, 20, 1, 2)).is_err());
    }

    #[test]
    fn ssim_of_inverted_binary_is_negative() {
        let a = Image::from_fn(16, 16, 1, |y, x, _| ((y / 2 + x / 3) % 2) as f32).unwrap();
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_of_constant_offset_is_luminance_term() {
        let a = Image::filled(16, 16, 1, 0.4).unwrap();
        let b = Image::filled(16, 16, 1, 0.5).unwrap();
        let expect = (2.0 * 0.4 * 0.5 + C1) / (0.16 + 0.25 + C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        assert!(got > 0.0 && got < 1.0);
    }
}
