//! Learnable linear extrapolation.
//!
//! At step `t_i` the corrected estimate is replaced by a learned linear
//! combination of itself and all earlier extrapolated estimates before it is
//! re-noised. Coefficients are fitted step by step on reference samples.

mod coeffs;
mod loss;
pub mod optim;
mod train;

pub use coeffs::{extrapolate, LleCoefficients, StepCoeffs};
pub use loss::{
    basis_matrix, batch_loss, loss, loss_grad_gamma, solve_ls_closed_form, GradientDomain, NoPerceptual,
    PerceptualLoss, PluginKind,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use train::{
    generate_references, infer, init_coeffs, loss_trace_csv, make_ground_truth, train, train_observed, train_timestep,
    write_loss_trace, InitMode, LrRule, StepBatch, TimestepReport, TrainConfig, TrainOutput, TrainingSet,
};
