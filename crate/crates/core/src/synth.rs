//! Synthetic HR patches.
//!
//! The dead-leaves model stacks opaque disks with power-law radii, which
//! gives occlusion edges at every scale and the heavy-tailed gradient
//! statistics of natural photographs. Each leaf carries a mild linear shading
//! ramp so flat regions are not perfectly constant.

use crate::error::Result;
use crate::image::Image;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy)]
struct Leaf {
    cy: f64,
    cx: f64,
    r2: f64,
    color: [f64; 3],
    ramp: (f64, f64),
}

/// Draws a radius from `p(r) ∝ r^-3` on `[r_min, r_max]`.
fn power_law_radius(rng: &mut RngState, r_min: f64, r_max: f64) -> f64 {
    let u = rng.uniform();
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    (a - u * (a - b)).powf(-0.5)
}

pub fn dead_leaves(
    height: usize,
    width: usize,
    channels: usize,
    rng: &mut RngState,
) -> Result<Image> {
    let extent = height.max(width) as f64;
    let (r_min, r_max) = (1.5, 0.6 * extent);
    let count = ((height * width) as f64 / 12.0).ceil() as usize + 8;
    let draw_color = |rng: &mut RngState| {
        let base = rng.uniform_in(0.05, 0.95);
        let mut c = [base; 3];
        for v in c.iter_mut() {
            *v = (base + rng.uniform_in(-0.15, 0.15)).clamp(0.0, 1.0);
        }
        c
    };
    let background = draw_color(rng);
    let leaves: Vec<Leaf> = (0..count)
        .map(|_| {
            let r = power_law_radius(rng, r_min, r_max);
            Leaf {
                cy: rng.uniform_in(-r, height as f64 + r),
                cx: rng.uniform_in(-r, width as f64 + r),
                r2: r * r,
                color: draw_color(rng),
                ramp: (rng.uniform_in(-0.01, 0.01), rng.uniform_in(-0.01, 0.01)),
            }
        })
        .collect();

    // Later leaves are in front; search from the top of the stack.
    Image::from_fn(height, width, channels, |y, x, c| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let ch = c.min(2);
        for leaf in leaves.iter().rev() {
            let (dy, dx) = (py - leaf.cy, px - leaf.cx);
            if dy * dy + dx * dx <= leaf.r2 {
                let v = leaf.color[ch] + leaf.ramp.0 * dy + leaf.ramp.1 * dx;
                return v.clamp(0.0, 1.0) as f32;
            }
        }
        background[ch] as f32
    })
}
