use super::{linear_op, Algorithm, InnerOpt, Solver, StepContext};
use crate::lle::optim::{minimize, OptimizerConfig, OptimizerKind};
use crate::numerics::RngStream;
use crate::operators::Observation;
use crate::{Error, Result, Vector};

/// Langevin chain toward `N(anchor, r2 I)` tilted by an optional data term:
/// `x <- x - step ((x - anchor) / r2 + data_grad(x)) + sqrt(2 step) e`.
/// `observer` sees every iterate after it is produced.
#[allow(clippy::too_many_arguments)]
pub fn langevin_chain(
    start: &Vector,
    anchor: &Vector,
    r2: f64,
    step: f64,
    iterations: usize,
    mut data_grad: Option<&mut dyn FnMut(&Vector) -> Result<Vector>>,
    stream: &mut RngStream,
    mut observer: impl FnMut(usize, &Vector),
) -> Result<Vector> {
    if !(r2 > 0.0) {
        return Err(Error::Parameter(format!(
            "Langevin anchor variance must be positive, got {r2}"
        )));
    }
    let noise_scale = (2.0 * step).sqrt();
    let mut x = start.clone();
    for j in 0..iterations {
        let mut g = (&x - anchor) / r2;
        if let Some(f) = data_grad.as_mut() {
            g += f(&x)?;
        }
        x -= g * step;
        x += stream.standard_normal(x.len()) * noise_scale;
        observer(j, &x);
    }
    Ok(x)
}

const PROXIMAL_BETA2: f64 = 0.95;

impl Solver<'_> {
    pub(super) fn corr_ddnm(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let a = linear_op(obs, Algorithm::Ddnm)?;
        let s = a.singular_values();
        let sigma_p = ctx.sigma_prev();
        let sab = ctx.ab_prev.sqrt();
        let eta_term = (1.0 - self.params.eta * self.params.eta).sqrt();
        let c0 = a.to_spectral(x0)?;
        let uy = a.obs_to_spectral(&obs.y)?;
        let delta = Vector::from_fn(s.len(), |k, _| {
            let lam = if obs.sigma_y == 0.0 || sigma_p >= sab * obs.sigma_y / s[k] {
                1.0
            } else {
                s[k] * sigma_p * eta_term / (sab * obs.sigma_y)
            };
            lam / s[k] * (uy[k] - s[k] * c0[k])
        });
        Ok(x0 + a.from_spectral(&delta))
    }

    pub(super) fn corr_ddrm(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let a = linear_op(obs, Algorithm::Ddrm)?;
        let s = a.singular_values();
        let sigma_p = ctx.sigma_prev();
        let sab = ctx.ab_prev.sqrt();
        let (eta, eta_b) = (self.params.eta, self.params.eta_b);
        let c0 = a.to_spectral(x0)?;
        let uy = a.obs_to_spectral(&obs.y)?;
        let delta = Vector::from_fn(s.len(), |k, _| {
            let ybar = uy[k] / s[k];
            let noise = obs.sigma_y / s[k];
            let new = if sigma_p < sab * noise {
                c0[k] + (1.0 - eta * eta).sqrt() * (sigma_p / sab) * (ybar - c0[k]) / noise
            } else {
                (1.0 - eta_b) * c0[k] + eta_b * ybar
            };
            new - c0[k]
        });
        Ok(x0 + a.from_spectral(&delta))
    }

    /// Gradient of `x_t -> ||y - A(x0(x_t))||^2` at the sampler estimate,
    /// chained through `dx0/dx_t = (I - sqrt(1 - ab) d eps/dx) / sqrt(ab)`.
    pub fn dps_xt_gradient(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let resid = obs.op.apply(x0)? - &obs.y;
        let g0 = obs.op.vjp(x0, &resid)? * 2.0;
        self.pullback_to_xt(ctx, &g0)
    }

    /// `(dx0/dx_t)^T g`. The Jacobian is symmetric, so the JVP serves.
    fn pullback_to_xt(&self, ctx: &StepContext, g: &Vector) -> Result<Vector> {
        let jv = self.model.eps_jvp(&ctx.x_t, ctx.t_cur, g)?;
        Ok((g - jv * (1.0 - ctx.ab_cur).sqrt()) / ctx.ab_cur.sqrt())
    }

    pub(super) fn corr_dps(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        if self.params.zeta == 0.0 {
            return Ok(x0.clone());
        }
        let g = self.dps_xt_gradient(ctx, x0, obs)?;
        let scale = self.params.zeta * ctx.ab_cur.sqrt() / ctx.ab_prev.sqrt();
        Ok(x0 - g * scale)
    }

    pub(super) fn corr_pigdm(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let a = linear_op(obs, Algorithm::Pigdm)?;
        let r2 = 1.0 - ctx.ab_cur;
        if r2 == 0.0 {
            return Err(Error::Singular("pseudoinverse guidance at alphabar = 1".into()));
        }
        let c = obs.sigma_y * obs.sigma_y / r2;
        let s = a.singular_values();
        let ur = a.obs_to_spectral(&(&obs.y - a.apply(x0)?))?;
        let w = Vector::from_fn(s.len(), |k, _| s[k] / (s[k] * s[k] + c) * ur[k]);
        let v = a.from_spectral(&w);
        let g = self.pullback_to_xt(ctx, &v)?;
        Ok(x0 + g * (ctx.ab_cur / ctx.ab_prev).sqrt())
    }

    pub(super) fn corr_reddiff(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let p = ctx.prev_xhat.as_ref().unwrap_or(x0);
        let (xi, lambda) = (self.params.xi, self.params.lambda);
        let mut step = x0 - p;
        if lambda != 0.0 {
            step -= obs.op.data_grad(x0, &obs.y)? * (2.0 * lambda);
        }
        Ok(p + step * xi)
    }

    /// `rho_t = lambda sigma_y^2 ab / (1 - ab)` at `t_cur`.
    pub fn diffpir_rho(&self, ctx: &StepContext, sigma_y: f64) -> f64 {
        self.params.lambda * sigma_y * sigma_y * ctx.ab_cur / (1.0 - ctx.ab_cur)
    }

    pub(super) fn corr_diffpir(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let rho = self.diffpir_rho(ctx, obs.sigma_y);
        if let Some(a) = obs.linear() {
            if rho < 1e-12 {
                return Ok(x0 + a.pinv_apply(&(&obs.y - a.apply(x0)?))?);
            }
            let s = a.singular_values();
            let c0 = a.to_spectral(x0)?;
            let uy = a.obs_to_spectral(&obs.y)?;
            let delta = Vector::from_fn(s.len(), |k, _| {
                (s[k] * uy[k] + rho * c0[k]) / (s[k] * s[k] + rho) - c0[k]
            });
            return Ok(x0 + a.from_spectral(&delta));
        }
        self.proximal_iterative(x0, obs, rho, self.params.inner_opt.lr, self.params.inner_opt.steps)
    }

    /// `argmin ||y - A(x)||^2 + rho ||x - x0||^2` by schedule-free AdamW from `x0`.
    /// The objective is deterministic, so the second moment uses a short memory.
    pub fn proximal_iterative(
        &self,
        x0: &Vector,
        obs: &Observation,
        rho: f64,
        lr: f64,
        steps: usize,
    ) -> Result<Vector> {
        let config = OptimizerConfig {
            beta2: PROXIMAL_BETA2,
            ..OptimizerConfig::new(lr, 0)
        };
        minimize(OptimizerKind::ScheduleFree, config, x0.clone(), steps, |x| {
            let resid = obs.op.apply(x)? - &obs.y;
            let d = x - x0;
            let value = resid.norm_squared() + rho * d.norm_squared();
            let grad = obs.op.vjp(x, &resid)? * 2.0 + d * (2.0 * rho);
            Ok((value, grad))
        })
    }

    pub(super) fn corr_dmps(&self, ctx: &StepContext, x0: &Vector, obs: &Observation) -> Result<Vector> {
        let a = linear_op(obs, Algorithm::Dmps)?;
        let lambda = self.params.lambda;
        if lambda == 0.0 {
            return Ok(x0.clone());
        }
        let ab = ctx.ab_cur;
        let s = a.singular_values();
        let ratio = (1.0 - ab) / ab;
        let denom = s.map(|sk| obs.sigma_y * obs.sigma_y + ratio * sk * sk);
        if denom.iter().any(|d| *d == 0.0) {
            return Err(Error::Singular("noiseless observation at alphabar = 1".into()));
        }
        let uy = a.obs_to_spectral(&obs.y)?;
        let cx = a.to_spectral(&ctx.x_t)?;
        let w = Vector::from_fn(s.len(), |k, _| s[k] / denom[k] * (uy[k] - s[k] * cx[k] / ab.sqrt()));
        let grad = a.from_spectral(&w) / ab.sqrt();
        let alpha = ab / ctx.ab_prev;
        let scale = lambda * (1.0 - alpha) / alpha.sqrt() / ctx.ab_prev.sqrt();
        Ok(x0 + grad * scale)
    }

    pub(super) fn corr_resample(&self, x0: &Vector, obs: &Observation) -> Result<Vector> {
        if self.params.exact_hc {
            let a = obs
                .linear()
                .ok_or_else(|| Error::UnsupportedOperator("exact hard consistency needs a linear operator".into()))?;
            return Ok(x0 + a.pinv_apply(&(&obs.y - a.apply(x0)?))?);
        }
        let InnerOpt { lr, momentum, steps } = self.params.inner_opt;
        let loss = |x: &Vector| -> Result<f64> { obs.op.residual_sq(x, &obs.y) };
        let start = loss(x0)?;
        let mut x = x0.clone();
        if start == 0.0 {
            return Ok(x);
        }
        let mut v = Vector::zeros(x.len());
        for k in 0..steps {
            let g = obs.op.data_grad(&x, &obs.y)? * 2.0;
            v = v * momentum + g;
            x -= &v * lr;
            if !crate::numerics::all_finite(&x) {
                return Err(Error::Convergence(format!(
                    "hard consistency iterate non-finite after {} steps",
                    k + 1
                )));
            }
        }
        let end = loss(&x)?;
        if !end.is_finite() || end > 10.0 * start {
            return Err(Error::Convergence(format!(
                "hard consistency objective rose from {start:e} to {end:e} over {steps} steps"
            )));
        }
        Ok(x)
    }

    /// Langevin step size `eta0 (delta + (t / T)(1 - delta))`.
    pub fn daps_step_size(&self, t: usize) -> f64 {
        let d = &self.params.daps;
        let frac = t as f64 / self.model.schedule().horizon() as f64;
        d.eta0 * (d.delta + frac * (1.0 - d.delta))
    }

    pub(super) fn corr_daps(
        &self,
        ctx: &StepContext,
        x0: &Vector,
        obs: &Observation,
        stream: &mut RngStream,
    ) -> Result<Vector> {
        let d = &self.params.daps;
        let step = self.daps_step_size(ctx.t_cur);
        let r2 = 1.0 - ctx.ab_cur;
        let noiseless = d.noiseless_linear.unwrap_or(obs.sigma_y == 0.0 && obs.op.is_linear());
        let mut data: Box<dyn FnMut(&Vector) -> Result<Vector>> = if noiseless {
            let a = obs.linear().ok_or_else(|| {
                Error::UnsupportedOperator("noiseless Langevin variant needs a linear operator".into())
            })?;
            Box::new(move |x: &Vector| Ok(a.apply_adjoint(&(a.apply(x)? - &obs.y))? / step))
        } else {
            let sigma = d.sigma_langevin;
            if sigma == 0.0 {
                return Err(Error::Config(
                    "Langevin observation noise is 0; enable the noiseless linear variant".into(),
                ));
            }
            Box::new(move |x: &Vector| Ok(obs.op.data_grad(x, &obs.y)? / (sigma * sigma)))
        };
        langevin_chain(x0, x0, r2, step, d.n_langevin, Some(&mut *data), stream, |_, _| {})
    }
}
