//! Exact noise predictor for a Gaussian-mixture data distribution.
//!
//! Under the VP forward process the marginal at time `t` is again a mixture,
//! `q_t = sum_k w_k N(sqrt(ab) mu_k, ab Sigma_k + (1 - ab) I)`, so
//! `eps(x, t) = -sqrt(1 - ab) grad log q_t(x)` and its Jacobian follow in
//! closed form from the component precisions and responsibilities.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::Cholesky;

use super::prior::GaussianMixturePrior;
use super::schedule::DiffusionSchedule;
use crate::{Error, Matrix, Result, Vector};

/// A noise predictor `eps_theta(x, t)` with its Jacobian-vector product.
///
/// The Jacobian must be symmetric (true for any score of a density), so the
/// same product serves as the vector-Jacobian product.
pub trait NoisePredictor: Sync {
    fn schedule(&self) -> &DiffusionSchedule;
    fn dim(&self) -> usize;
    fn eps(&self, x: &Vector, t: usize) -> Result<Vector>;
    fn eps_jvp(&self, x: &Vector, t: usize, v: &Vector) -> Result<Vector>;

    fn alphabar(&self, t: usize) -> Result<f64> {
        self.schedule().alphabar(t)
    }
}

struct NoisedComponent {
    mean: Vector,
    precision: Matrix,
    log_norm: f64,
}

/// Prior plus schedule; noised component factorizations are cached per `t`.
pub struct GmmScore {
    prior: GaussianMixturePrior,
    schedule: DiffusionSchedule,
    cache: Vec<OnceLock<Arc<Vec<NoisedComponent>>>>,
}

impl Clone for GmmScore {
    fn clone(&self) -> Self {
        Self::new(self.prior.clone(), self.schedule.clone())
    }
}

impl std::fmt::Debug for GmmScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GmmScore")
            .field("dim", &self.prior.dim())
            .field("components", &self.prior.components())
            .field("horizon", &self.schedule.horizon())
            .finish()
    }
}

/// Responsibilities and per-component `P_k (x - m_k)`.
struct Posterior {
    resp: Vec<f64>,
    whitened: Vec<Vector>,
}

impl GmmScore {
    pub fn new(prior: GaussianMixturePrior, schedule: DiffusionSchedule) -> Self {
        let cache = (0..=schedule.horizon()).map(|_| OnceLock::new()).collect();
        Self { prior, schedule, cache }
    }

    pub fn prior(&self) -> &GaussianMixturePrior {
        &self.prior
    }

    fn components(&self, t: usize) -> Result<Arc<Vec<NoisedComponent>>> {
        let slot = self.cache.get(t).ok_or_else(|| {
            Error::Bounds(format!(
                "timestep {t} outside schedule horizon {}",
                self.schedule.horizon()
            ))
        })?;
        if let Some(c) = slot.get() {
            return Ok(c.clone());
        }
        let built = Arc::new(self.build_components(self.schedule.alphabar(t)?)?);
        Ok(slot.get_or_init(|| built).clone())
    }

    fn build_components(&self, ab: f64) -> Result<Vec<NoisedComponent>> {
        let d = self.prior.dim();
        let scale = ab.sqrt();
        let log_2pi = (2.0 * PI).ln();
        self.prior
            .weights()
            .iter()
            .zip(self.prior.means())
            .zip(self.prior.covariances())
            .map(|((w, mu), sigma)| {
                let cov = sigma * ab + Matrix::identity(d, d) * (1.0 - ab);
                let chol = Cholesky::new(cov).ok_or_else(|| {
                    Error::Numeric(format!("noised covariance not positive definite at alphabar {ab}"))
                })?;
                let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                Ok(NoisedComponent {
                    mean: mu * scale,
                    precision: chol.inverse(),
                    log_norm: w.ln() - 0.5 * log_det - 0.5 * d as f64 * log_2pi,
                })
            })
            .collect()
    }

    fn posterior(&self, x: &Vector, t: usize) -> Result<Posterior> {
        if x.len() != self.prior.dim() {
            return Err(Error::Dimension(format!(
                "signal of length {} for a {}-dimensional prior",
                x.len(),
                self.prior.dim()
            )));
        }
        let comps = self.components(t)?;
        let mut logp = Vec::with_capacity(comps.len());
        let mut whitened = Vec::with_capacity(comps.len());
        for c in comps.iter() {
            let diff = x - &c.mean;
            let pd = &c.precision * &diff;
            logp.push(c.log_norm - 0.5 * diff.dot(&pd));
            whitened.push(pd);
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= total);
        Ok(Posterior { resp, whitened })
    }

    /// `grad log q_t(x)`.
    pub fn score(&self, x: &Vector, t: usize) -> Result<Vector> {
        let post = self.posterior(x, t)?;
        Ok(post
            .resp
            .iter()
            .zip(&post.whitened)
            .fold(Vector::zeros(x.len()), |acc, (r, pd)| acc - pd * *r))
    }

    /// Hessian of `log q_t` applied to `v`.
    pub fn score_hvp(&self, x: &Vector, t: usize, v: &Vector) -> Result<Vector> {
        if v.len() != x.len() {
            return Err(Error::Dimension(format!(
                "direction of length {} for signal of length {}",
                v.len(),
                x.len()
            )));
        }
        let comps = self.components(t)?;
        let post = self.posterior(x, t)?;
        // H = sum_k r_k (g_k g_k^T - P_k) - s s^T with g_k = -P_k (x - m_k).
        let mut out = Vector::zeros(x.len());
        let mut s = Vector::zeros(x.len());
        for ((r, pd), c) in post.resp.iter().zip(&post.whitened).zip(comps.iter()) {
            if *r == 0.0 {
                continue;
            }
            out -= (&c.precision * v) * *r;
            out += pd * (*r * pd.dot(v));
            s -= pd * *r;
        }
        out -= &s * s.dot(v);
        Ok(out)
    }
}

impl NoisePredictor for GmmScore {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn eps(&self, x: &Vector, t: usize) -> Result<Vector> {
        let ab = self.schedule.alphabar(t)?;
        Ok(self.score(x, t)? * -(1.0 - ab).sqrt())
    }

    fn eps_jvp(&self, x: &Vector, t: usize, v: &Vector) -> Result<Vector> {
        let ab = self.schedule.alphabar(t)?;
        Ok(self.score_hvp(x, t, v)? * -(1.0 - ab).sqrt())
    }
}

/// Free-function form of [`NoisePredictor::eps`].
pub fn gmm_eps(model: &GmmScore, x: &Vector, t: usize) -> Result<Vector> {
    model.eps(x, t)
}

/// Free-function form of [`NoisePredictor::eps_jvp`].
pub fn gmm_eps_jvp(model: &GmmScore, x: &Vector, t: usize, v: &Vector) -> Result<Vector> {
    model.eps_jvp(x, t, v)
}
