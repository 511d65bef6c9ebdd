//! Privacy accounting and gradient sanitization.
//!
//! The accountant tracks Renyi divergence of subsampled Gaussian releases at
//! a fixed grid of integer orders and converts to (epsilon, delta) on
//! demand. Everything downstream of [`clip::sanitize_mean`] is
//! post-processing and must not touch raw per-example data.

mod accountant;
mod calibrate;
mod clip;

pub use accountant::{default_orders, rdp_to_dp, sgm_rdp, AccountantState};
pub use calibrate::{
    calibrate_sigma, classical_gaussian_sigma, CALIBRATION_TOLERANCE,
};
pub use clip::{clip_gradients, sanitize_mean};
