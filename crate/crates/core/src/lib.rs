//! Diffusion-based inverse-problem solvers in Sampler/Corrector/Noiser form,
//! with learnable linear extrapolation (LLE) of the corrected estimates.
//!
//! Everything runs against analytic Gaussian-mixture priors, so the noise
//! predictor, its Jacobian and the exact posterior are all available in
//! closed form.
//!
//! Module map:
//! - [`numerics`]: seeded random streams, the binary array format, PSNR.
//! - [`diffusion`]: noise schedule, time grids, mixture score model, DDIM.
//! - [`operators`]: observation operators in spectral form plus a
//!   differentiable nonlinear blur.
//! - [`canonical`]: the nine solvers decomposed into sampler, corrector and
//!   noiser.
//! - [`lle`]: coefficient model, training, inference, schedule-free AdamW.
//! - [`harness`]: experiment configuration, posterior oracle, evaluation and
//!   step sweeps.

pub mod canonical;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod lle;
pub mod numerics;
pub mod operators;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
