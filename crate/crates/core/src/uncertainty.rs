//! Per-pixel uncertainty from an SR estimate and the noise weighting map
//! derived from it.
//!
//! The uncertainty of a pixel is half the channel-mean absolute residual
//! between the SR estimate `g(y0)` and `y0`. It is mapped to a weight in
//! `[b_u, 1]` that rises linearly up to `psi_max` and saturates at 1 beyond.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingParams {
    /// Weight assigned to zero uncertainty.
    pub b_u: f64,
    /// Uncertainty at which the weight saturates to 1.
    pub psi_max: f64,
    /// Optional box-blur radius applied to the uncertainty map; 0 disables.
    #[serde(default)]
    pub smoothing_radius: usize,
}

impl Default for WeightingParams {
    fn default() -> Self {
        Self {
            b_u: 0.4,
            psi_max: 0.05,
            smoothing_radius: 0,
        }
    }
}

impl WeightingParams {
    /// Isotropic baseline: every pixel gets weight 1.
    pub fn isotropic() -> Self {
        Self {
            b_u: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_u > 0.0 && self.b_u <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "b_u must lie in (0, 1], got {}",
                self.b_u
            )));
        }
        if !(self.psi_max > 0.0 && self.psi_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "psi_max must be positive, got {}",
                self.psi_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "uncertainty map {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "uncertainty values must be >= 0, found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Box blur with the given radius and clamped borders.
    pub fn box_smoothed(&self, radius: usize) -> UncertaintyMap {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let r = radius as isize;
        let at = |y: isize, x: isize| {
            let y = y.clamp(0, h as isize - 1) as usize;
            let x = x.clamp(0, w as isize - 1) as usize;
            self.values[y * w + x]
        };
        let mut horiz = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-r..=r).map(|d| at(y as isize, x as isize + d)).sum();
                horiz[y * w + x] = s / (2 * radius + 1) as f64;
            }
        }
        let mut values = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-r..=r)
                    .map(|d| {
                        let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                        horiz[yy * w + x]
                    })
                    .sum();
                values[y * w + x] = s / (2 * radius + 1) as f64;
            }
        }
        UncertaintyMap {
            height: h,
            width: w,
            values,
        }
    }

    /// Grayscale heatmap, `[0, max]` mapped linearly onto `[0, 255]`.
    pub fn to_heatmap(&self) -> Image {
        let max = self.max();
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        heatmap(
            self.height,
            self.width,
            self.values.iter().map(|v| v * scale),
        )
    }

    pub fn write_heatmap(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_heatmap().write_png(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    b_u: f64,
    psi_max: f64,
}

impl WeightMap {
    /// Map with the same weight everywhere.
    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight must be >= 0, got {value}"
            )));
        }
        Ok(Self {
            height,
            width,
            values: vec![value; height * width],
            b_u: value.min(1.0),
            psi_max: f64::INFINITY,
        })
    }

    /// Map from explicit per-pixel weights.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "weight map {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "weights must be >= 0, found {v}"
            )));
        }
        let b_u = values.iter().cloned().fold(1.0, f64::min);
        Ok(Self {
            height,
            width,
            values,
            b_u,
            psi_max: f64::INFINITY,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Weight for the pixel that owns flat sample index `i` of an image with
    /// `channels` channels.
    #[inline]
    pub fn for_sample(&self, i: usize, channels: usize) -> f64 {
        self.values[i / channels]
    }

    pub fn b_u(&self) -> f64 {
        self.b_u
    }

    pub fn psi_max(&self) -> f64 {
        self.psi_max
    }

    pub fn ensure_matches(&self, img: &Image) -> Result<()> {
        if img.height() == self.height && img.width() == self.width {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "weight map {}x{} vs image {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )))
        }
    }

    /// Sub-window of the map; keeps `b_u` and `psi_max`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<WeightMap> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{} weight map",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        for y in top..top + h {
            values
                .extend_from_slice(&self.values[y * self.width + left..y * self.width + left + w]);
        }
        Ok(WeightMap {
            height: h,
            width: w,
            values,
            b_u: self.b_u,
            psi_max: self.psi_max,
        })
    }

    /// Grayscale heatmap, `[b_u, 1]` mapped linearly onto `[0, 255]`.
    pub fn to_heatmap(&self) -> Image {
        let span = 1.0 - self.b_u;
        let b_u = self.b_u;
        heatmap(
            self.height,
            self.width,
            self.values
                .iter()
                .map(move |v| if span > 0.0 { (v - b_u) / span } else { 1.0 }),
        )
    }

    pub fn write_heatmap(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_heatmap().write_png(path)
    }
}

fn heatmap(h: usize, w: usize, unit: impl Iterator<Item = f64>) -> Image {
    let data = unit.map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Image::new(h, w, 1, data).expect("heatmap dimensions come from a valid map")
}

/// `psi = 0.5 * mean_c |g_y0 - y0|` per pixel.
pub fn estimate_uncertainty(y0: &Image, g_y0: &Image) -> Result<UncertaintyMap> {
    y0.ensure_same_shape(g_y0, "estimate_uncertainty")?;
    let c = y0.channels();
    let values = y0
        .data()
        .chunks_exact(c)
        .zip(g_y0.data().chunks_exact(c))
        .map(|(a, b)| {
            let s: f64 = a
                .iter()
                .zip(b)
                .map(|(&p, &q)| (q as f64 - p as f64).abs())
                .sum();
            0.5 * s / c as f64
        })
        .collect();
    UncertaintyMap::new(y0.height(), y0.width(), values)
}

/// Piecewise-linear weight: `b_u + (1 - b_u) * psi / psi_max` on
/// `[0, psi_max]`, 1 above.
pub fn weight_coefficient(psi: f64, b_u: f64, psi_max: f64) -> Result<f64> {
    if !(psi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "psi must be >= 0, got {psi}"
        )));
    }
    WeightingParams {
        b_u,
        psi_max,
        smoothing_radius: 0,
    }
    .validate()?;
    Ok(weight_unchecked(psi, b_u, psi_max))
}

#[inline]
fn weight_unchecked(psi: f64, b_u: f64, psi_max: f64) -> f64 {
    if psi <= psi_max {
        (b_u + (1.0 - b_u) * (psi / psi_max)).min(1.0)
    } else {
        1.0
    }
}

pub fn build_weight_map(u: &UncertaintyMap, b_u: f64, psi_max: f64) -> Result<WeightMap> {
    WeightingParams {
        b_u,
        psi_max,
        smoothing_radius: 0,
    }
    .validate()?;
    Ok(WeightMap {
        height: u.height,
        width: u.width,
        values: u
            .values
            .iter()
            .map(|&psi| weight_unchecked(psi, b_u, psi_max))
            .collect(),
        b_u,
        psi_max,
    })
}

/// Uncertainty estimate, optional smoothing, then weighting.
pub fn weight_map_for(
    y0: &Image,
    g_y0: &Image,
    params: &WeightingParams,
) -> Result<(UncertaintyMap, WeightMap)> {
    params.validate()?;
    let psi = estimate_uncertainty(y0, g_y0)?.box_smoothed(params.smoothing_radius);
    let w = build_weight_map(&psi, params.b_u, params.psi_max)?;
    Ok((psi, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_prediction_gives_zero_uncertainty() {
        let y = Image::from_fn(4, 4, 3, |y, x, c| (y + x + c) as f32 / 10.0).unwrap();
        let u = estimate_uncertainty(&y, &y).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_residual_single_channel() {
        let y = Image::new(1, 1, 1, vec![0.5]).unwrap();
        let g = Image::new(1, 1, 1, vec![0.6]).unwrap();
        let u = estimate_uncertainty(&y, &g).unwrap();
        assert!((u.get(0, 0) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn channel_mean_reduction() {
        let y = Image::new(1, 1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        let g = Image::new(1, 1, 3, vec![0.5, 0.56, 0.38]).unwrap();
        let u = estimate_uncertainty(&y, &g).unwrap();
        assert!((u.get(0, 0) - 0.03).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Image::zeros(2, 2, 1).unwrap();
        let b = Image::zeros(2, 3, 1).unwrap();
        assert!(matches!(
            estimate_uncertainty(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weight_anchor_values() {
        assert_eq!(weight_coefficient(0.0, 0.4, 0.05).unwrap(), 0.4);
        assert_eq!(weight_coefficient(0.05, 0.4, 0.05).unwrap(), 1.0);
        assert_eq!(weight_coefficient(0.3, 0.4, 0.05).unwrap(), 1.0);
        assert!((weight_coefficient(0.025, 0.4, 0.05).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn weight_rejects_bad_parameters() {
        assert!(weight_coefficient(-0.1, 0.4, 0.05).is_err());
        assert!(weight_coefficient(f64::NAN, 0.4, 0.05).is_err());
        assert!(weight_coefficient(0.1, 0.0, 0.05).is_err());
        assert!(weight_coefficient(0.1, 1.5, 0.05).is_err());
        assert!(weight_coefficient(0.1, 0.4, 0.0).is_err());
    }

    #[test]
    fn weight_map_elementwise() {
        let u = UncertaintyMap::new(1, 3, vec![0.0, 0.025, 0.9]).unwrap();
        let w = build_weight_map(&u, 0.4, 0.05).unwrap();
        assert_eq!(w.values()[0], 0.4);
        assert!((w.values()[1] - 0.7).abs() < 1e-12);
        assert_eq!(w.values()[2], 1.0);

        let zero = UncertaintyMap::new(2, 2, vec![0.0; 4]).unwrap();
        let w = build_weight_map(&zero, 0.4, 0.05).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.4));

        let high = UncertaintyMap::new(2, 2, vec![0.05, 0.1, 1.0, 7.0]).unwrap();
        let w = build_weight_map(&high, 0.4, 0.05).unwrap();
        assert!(w.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn continuity_at_saturation() {
        for eps in [1e-3, 1e-6, 1e-9, 1e-12] {
            let w = weight_coefficient(0.05 - eps, 0.4, 0.05).unwrap();
            assert!((1.0 - w).abs() <= 12.0 * eps + 1e-15);
        }
    }

    #[test]
    fn box_smoothing_preserves_constants() {
        let u = UncertaintyMap::new(5, 5, vec![0.02; 25]).unwrap();
        let s = u.box_smoothed(2);
        assert!(s.values().iter().all(|v| (v - 0.02).abs() < 1e-15));
        let mut vals = vec![0.0; 25];
        vals[12] = 0.09;
        let s = UncertaintyMap::new(5, 5, vals).unwrap().box_smoothed(1);
        assert!((s.get(2, 2) - 0.01).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.01).abs() < 1e-15);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn heatmaps_span_full_range() {
        let u = UncertaintyMap::new(1, 2, vec![0.0, 0.2]).unwrap();
        assert_eq!(u.to_heatmap().to_bytes(), vec![0, 255]);
        let w = build_weight_map(&u, 0.4, 0.05).unwrap();
        assert_eq!(w.to_heatmap().to_bytes(), vec![0, 255]);
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(a in 0.0f64..0.2, b in 0.0f64..0.2, b_u in 0.01f64..=1.0, psi_max in 0.001f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let wl = weight_coefficient(lo, b_u, psi_max).unwrap();
            let wh = weight_coefficient(hi, b_u, psi_max).unwrap();
            prop_assert!(wl <= wh);
            prop_assert!(wl >= b_u && wh <= 1.0);
        }

        #[test]
        fn unit_floor_is_isotropic(vals in prop::collection::vec(0.0f64..1.0, 16)) {
            let u = UncertaintyMap::new(4, 4, vals).unwrap();
            let w = build_weight_map(&u, 1.0, 0.05).unwrap();
            prop_assert!(w.values().iter().all(|&v| v == 1.0));
        }
    }
}
