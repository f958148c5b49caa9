//! VP diffusion substrate: schedule, grids, analytic mixture score, DDIM.

pub mod ddim;
pub mod prior;
pub mod schedule;
pub mod score;

pub use ddim::{ddim_coefficients, ddim_run, ddim_sample, ddim_step, ddim_step_with_eps, tweedie, tweedie_from_eps};
pub use prior::{GaussianMixturePrior, PriorFile};
pub use schedule::{make_time_grid, DiffusionSchedule, ScheduleSpec, TimeGrid};
pub use score::{gmm_eps, gmm_eps_jvp, GmmScore, NoisePredictor};
