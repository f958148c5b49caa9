use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Peak-to-peak range of signals living in `[-1, 1]`.
pub const DEFAULT_PEAK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub oracle_mse: Option<f64>,
}

impl MetricReport {
    pub fn new(mse: f64, peak: f64, oracle_mse: Option<f64>) -> Self {
        Self {
            mse,
            psnr_db: psnr_from_mse(mse, peak),
            oracle_mse,
        }
    }
}

/// Mean squared error per coordinate.
pub fn mse(x: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(x, reference)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / x.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak^2 / mse)`, infinite when the signals coincide.
pub fn psnr(x: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("psnr peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(x, reference)?, peak))
}

fn check_len(x: &[f64], reference: &[f64]) -> Result<()> {
    if x.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "psnr of length {} against length {}",
            x.len(),
            reference.len()
        )));
    }
    Ok(())
}
