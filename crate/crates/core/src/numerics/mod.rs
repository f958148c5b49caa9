//! Deterministic randomness, array persistence and scalar metrics.

pub mod array_file;
pub mod metrics;
pub mod rng;

pub use array_file::{load_array, save_array, ArrayData};
pub use metrics::{mse, psnr, psnr_from_mse, MetricReport, DEFAULT_PEAK};
pub use rng::{purpose, sample_standard_normal, stream_id, RngStream};

use crate::Vector;

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
