use nalgebra::Cholesky;

use crate::diffusion::GaussianMixturePrior;
use crate::operators::LinearOperator;
use crate::{Error, Matrix, Result, Vector};

/// Smallest observation noise the conjugate update accepts.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Exact posterior of a Gaussian-mixture prior under `y = Ax + sigma n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorOracle {
    pub weights: Vec<f64>,
    pub means: Vec<Vector>,
    pub covariances: Vec<Matrix>,
    /// Noise level actually used.
    pub sigma_y: f64,
    /// Set when a noiseless request was answered at [`SIGMA_FLOOR`].
    pub floored: bool,
}

impl PosteriorOracle {
    /// Posterior mean, the MMSE estimate.
    pub fn mmse_mean(&self) -> Vector {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(Vector::zeros(self.means[0].len()), |acc, (w, m)| acc + m * *w)
    }

    /// Trace of the mixture posterior covariance.
    pub fn variance_trace(&self) -> f64 {
        let mean = self.mmse_mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.covariances))
            .map(|(w, (m, c))| w * (c.trace() + (m - &mean).norm_squared()))
            .sum()
    }
}

/// Per-component Kalman update with reweighting by the evidence
/// `N(y; A mu_k, A S_k A^T + sigma^2 I)`. With `noiseless` set, noise
/// levels below the floor are raised to it and the result is flagged;
/// otherwise they are a configuration error.
pub fn oracle_posterior(
    prior: &GaussianMixturePrior,
    op: &LinearOperator,
    y: &Vector,
    sigma_y: f64,
    noiseless: bool,
) -> Result<PosteriorOracle> {
    if op.input_dim() != prior.dim() || y.len() != op.output_dim() {
        return Err(Error::Dimension(format!(
            "operator {}x{} with prior dimension {} and observation length {}",
            op.output_dim(),
            op.input_dim(),
            prior.dim(),
            y.len()
        )));
    }
    let (sigma, floored) = if sigma_y >= SIGMA_FLOOR {
        (sigma_y, false)
    } else if noiseless && sigma_y >= 0.0 {
        (SIGMA_FLOOR, true)
    } else {
        return Err(Error::Config(format!(
            "oracle needs sigma_y >= {SIGMA_FLOOR:e} (got {sigma_y:e}); request the noiseless approximation explicitly"
        )));
    };
    let a = op.matrix();
    let m = a.nrows();
    let mut log_w = Vec::with_capacity(prior.components());
    let mut means = Vec::with_capacity(prior.components());
    let mut covariances = Vec::with_capacity(prior.components());
    for ((w, mu), cov) in prior.weights().iter().zip(prior.means()).zip(prior.covariances()) {
        let ac = &a * cov;
        let s = &ac * a.transpose() + Matrix::identity(m, m) * (sigma * sigma);
        let chol = Cholesky::new(s).ok_or_else(|| Error::Singular("innovation covariance".into()))?;
        let r = y - &a * mu;
        let sr = chol.solve(&r);
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        log_w.push(w.ln() - 0.5 * (r.dot(&sr) + log_det + m as f64 * (2.0 * std::f64::consts::PI).ln()));
        // K = C A^T S^-1, so K r = (AC)^T S^-1 r and K A C = (AC)^T S^-1 AC.
        means.push(mu + ac.transpose() * sr);
        let post = cov - ac.transpose() * chol.solve(&ac);
        covariances.push((&post + post.transpose()) * 0.5);
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(PosteriorOracle {
        weights: raw.iter().map(|r| r / total).collect(),
        means,
        covariances,
        sigma_y: sigma,
        floored,
    })
}
