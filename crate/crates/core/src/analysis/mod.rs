//! Image-quality metrics, the residual histogram and the numerical oracles
//! used to check the sampler.

pub mod bayes;
pub mod histogram;
pub mod metrics;
pub mod moments;

pub use bayes::{bayes_grid_posterior, gaussian_pdf, tv_distance, GridPosterior, GridSpec};
pub use histogram::{residual_histogram, Histogram};
pub use metrics::{mse, psnr, psnr_uncapped, ssim, PSNR_CAP};
pub use moments::{mc_moment_check, MomentReport};
