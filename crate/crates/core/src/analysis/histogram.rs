use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;

/// Fixed-width histogram on `[0, upper]` with an overflow bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    pub overflow: u64,
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct HistogramRow {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: u64,
}

impl Histogram {
    pub fn new(bin_width: f64, upper: f64) -> Result<Self> {
        if !(bin_width > 0.0 && upper > 0.0 && bin_width.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need bin_width > 0 and cutoff > 0, got {bin_width}, {upper}"
            )));
        }
        let bins = (upper / bin_width - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            bin_width,
            lower: 0.0,
            upper,
            counts: vec![0; bins],
            total: 0,
            overflow: 0,
        })
    }

    /// Adds one value. Values within `1e-6` bin widths below an edge count
    /// in the upper bin, which absorbs `f32` rounding of exact offsets.
    pub fn add(&mut self, v: f64) {
        self.total += 1;
        if !(v <= self.upper) {
            self.overflow += 1;
            return;
        }
        let idx = ((v - self.lower) / self.bin_width + 1e-6).floor().max(0.0) as usize;
        let last = self.counts.len() - 1;
        self.counts[idx.min(last)] += 1;
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Bins from the mode to the cutoff never increase.
    pub fn tail_is_monotone(&self) -> bool {
        self.counts[self.mode()..].windows(2).all(|p| p[1] <= p[0])
    }

    pub fn rows(&self) -> Vec<HistogramRow> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramRow {
                bin_start: self.lower + i as f64 * self.bin_width,
                bin_end: (self.lower + (i + 1) as f64 * self.bin_width).min(self.upper),
                count,
            })
            .collect()
    }

    /// One row per bin; the overflow bucket is written last with
    /// `bin_end = inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.rows() {
            w.serialize(r)?;
        }
        w.serialize(HistogramRow {
            bin_start: self.upper,
            bin_end: f64::INFINITY,
            count: self.overflow,
        })?;
        w.flush().map_err(|e| Error::io("<histogram>", e))?;
        Ok(())
    }
}

/// Histogram of per-sample `|y0 - x0|` over all pairs.
pub fn residual_histogram(
    pairs: &[(&Image, &Image)],
    bin_width: f64,
    cutoff: f64,
) -> Result<Histogram> {
    let mut h = Histogram::new(bin_width, cutoff)?;
    for (i, (y0, x0)) in pairs.iter().enumerate() {
        y0.ensure_same_shape(x0, &format!("residual pair {i}"))?;
        for (&a, &b) in y0.data().iter().zip(x0.data()) {
            h.add((a as f64 - b as f64).abs());
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pairs_fill_bin_zero() {
        let a = Image::filled(5, 5, 3, 0.3).unwrap();
        let h = residual_histogram(&[(&a, &a), (&a, &a)], 0.01, 0.4).unwrap();
        assert_eq!(h.counts.len(), 40);
        assert_eq!(h.counts[0], 150);
        assert_eq!(h.total, 150);
        assert_eq!(h.counts.iter().sum::<u64>() + h.overflow, h.total);
    }

    #[test]
    fn constant_offset_lands_in_its_bin() {
        let x = Image::filled(4, 4, 1, 0.25).unwrap();
        let y = Image::filled(4, 4, 1, 0.3).unwrap();
        let h = residual_histogram(&[(&y, &x)], 0.01, 0.4).unwrap();
        assert_eq!(h.counts[5], 16);
        let far = Image::filled(4, 4, 1, 0.9).unwrap();
        let h = residual_histogram(&[(&far, &x)], 0.01, 0.4).unwrap();
        assert_eq!(h.overflow, 16);
        assert!(residual_histogram(&[(&far, &Image::zeros(4, 3, 1).unwrap())], 0.01, 0.4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut h = Histogram::new(0.1, 0.3).unwrap();
        for v in [0.0, 0.05, 0.15, 0.29, 0.3, 0.31] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![2, 1, 2]);
        assert_eq!(h.overflow, 1);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let rows: Vec<HistogramRow> = csv::Reader::from_reader(buf.as_slice())
            .deserialize()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(&rows[..3], &h.rows()[..]);
        assert_eq!(rows[3].count, 1);
    }

    #[test]
    fn tail_monotonicity() {
        let mut h = Histogram::new(1.0, 5.0).unwrap();
        h.counts = vec![3, 9, 7, 7, 2];
        assert!(h.tail_is_monotone());
        h.counts = vec![3, 9, 7, 8, 2];
        assert!(!h.tail_is_monotone());
    }
}
