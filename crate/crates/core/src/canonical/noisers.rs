use super::{linear_op, Algorithm, Solver, StepContext};
use crate::diffusion::ddim_coefficients;
use crate::numerics::RngStream;
use crate::operators::Observation;
use crate::{Error, Result, Vector};

impl Solver<'_> {
    /// `sqrt(ab') x_hat + c1 e + c2 eps_theta` with the standard DDIM weights.
    pub fn noiser_ddim(&self, ctx: &StepContext, xhat: &Vector, eta: f64, stream: &mut RngStream) -> Result<Vector> {
        let (c1, c2) = ddim_coefficients(ctx.ab_cur, ctx.ab_prev, eta)?;
        let mut out = xhat * ctx.ab_prev.sqrt() + &ctx.eps * c2;
        if c1 != 0.0 {
            out += stream.standard_normal(xhat.len()) * c1;
        }
        Ok(out)
    }

    /// DDIM form with `c1 = eta sigma'` and `c2 = sqrt(1 - eta^2) sigma'`.
    pub fn noiser_dmps(&self, ctx: &StepContext, xhat: &Vector, eta: f64, stream: &mut RngStream) -> Result<Vector> {
        let sigma = ctx.sigma_prev();
        let (c1, c2) = (eta * sigma, (1.0 - eta * eta).sqrt() * sigma);
        let mut out = xhat * ctx.ab_prev.sqrt() + &ctx.eps * c2;
        if c1 != 0.0 {
            out += stream.standard_normal(xhat.len()) * c1;
        }
        Ok(out)
    }

    /// `sqrt(ab') x_hat + sqrt(1 - ab') e`.
    pub fn noiser_direct(&self, ctx: &StepContext, xhat: &Vector, stream: &mut RngStream) -> Result<Vector> {
        let sigma = ctx.sigma_prev();
        let mut out = xhat * ctx.ab_prev.sqrt();
        if sigma != 0.0 {
            out += stream.standard_normal(xhat.len()) * sigma;
        }
        Ok(out)
    }

    /// Direct noise plus the effective-eps direction recovered from `x_hat`.
    pub fn noiser_diffpir(&self, ctx: &StepContext, xhat: &Vector, eta: f64, stream: &mut RngStream) -> Result<Vector> {
        let sigma = ctx.sigma_prev();
        let mut out = xhat * ctx.ab_prev.sqrt();
        if eta != 0.0 && sigma != 0.0 {
            out += stream.standard_normal(xhat.len()) * (eta * sigma);
        }
        let det = (1.0 - eta * eta).sqrt() * sigma / (1.0 - ctx.ab_cur).sqrt();
        if det != 0.0 {
            out += (&ctx.x_t - xhat * ctx.ab_cur.sqrt()) * det;
        }
        Ok(out)
    }

    /// Stochastic re-encoding of the sampler estimate blended with `x_hat`.
    pub fn noiser_resample(&self, ctx: &StepContext, xhat: &Vector, stream: &mut RngStream) -> Result<Vector> {
        let (ab_t, ab_p) = (ctx.ab_cur, ctx.ab_prev);
        if ab_p == 1.0 {
            return Ok(xhat.clone());
        }
        let var_p = 1.0 - ab_p;
        let s2 = self.params.gamma_rs * (var_p / ab_t) * (1.0 - ab_t / ab_p);
        let (c1, c2) = ddim_coefficients(ab_t, ab_p, self.params.eta)?;
        let mut encoded = &ctx.x0 * ab_p.sqrt() + &ctx.eps * c2;
        if c1 != 0.0 {
            encoded += stream.standard_normal(xhat.len()) * c1;
        }
        if s2 == 0.0 {
            return Ok(encoded);
        }
        let total = s2 + var_p;
        let mean = (xhat * (s2 * ab_p.sqrt()) + encoded * var_p) / total;
        Ok(mean + stream.standard_normal(xhat.len()) * (s2 * var_p / total).sqrt())
    }

    /// Coordinatewise noiser of the spectral algorithms. Null-space
    /// coordinates follow DDIM; range coordinates split on whether the
    /// observation noise `sigma_y / s_k` exceeds the target noise level.
    pub(super) fn noiser_spectral(
        &self,
        ctx: &StepContext,
        xhat: &Vector,
        obs: &Observation,
        stream: &mut RngStream,
    ) -> Result<Vector> {
        let algo = self.algorithm();
        let a = linear_op(obs, algo)?;
        let s = a.singular_values();
        let (eta, eta_b) = (self.params.eta, self.params.eta_b);
        let ab = ctx.ab_prev;
        let sab = ab.sqrt();
        let sigma = ctx.sigma_prev();
        let sy = obs.sigma_y;

        let e = stream.standard_normal(xhat.len());
        let (xr, xn) = a.split(xhat)?;
        let (_, en) = a.split(&ctx.eps)?;
        let (_, zn) = a.split(&e)?;
        let null = xn * sab + en * ((1.0 - eta * eta).sqrt() * sigma) + zn * (eta * sigma);

        let cx = a.to_spectral(&xr)?;
        let ce = a.to_spectral(&e)?;
        let mut range = Vector::zeros(s.len());
        for k in 0..s.len() {
            let middle = sigma < sab * sy / s[k];
            let scale = if middle {
                eta * sigma
            } else {
                let rad = match algo {
                    Algorithm::Ddrm => 1.0 - ab - ab * sy * sy * eta_b * eta_b / (s[k] * s[k]),
                    _ => sigma * sigma - sy * sy * ab / (s[k] * s[k]),
                };
                if rad < -1e-12 {
                    return Err(Error::Parameter(format!(
                        "negative noise variance {rad:e} in coordinate {k} at t = {}",
                        ctx.t_prev
                    )));
                }
                rad.max(0.0).sqrt()
            };
            range[k] = sab * cx[k] + scale * ce[k];
        }
        Ok(null + a.from_spectral(&range))
    }
}
