//! Inverse solvers written as Sampler -> Corrector -> Noiser.
//!
//! One step at `t_i` evaluates `eps(x_t, t_i)` once, forms the sampler
//! estimate `x_{0,t_i}`, corrects it against the observation to get `x_hat`,
//! and re-noises `x_hat` to `t_{i-1}`. The noise predictor is shared, and each
//! sample carries its own [`RngStream`].

mod correctors;
mod noisers;
pub mod params;

pub use correctors::langevin_chain;
pub use params::{AlgoParams, Algorithm, DapsParams, InnerOpt, ParamOverrides};

use crate::diffusion::{ddim_step, ddim_step_with_eps, tweedie_from_eps, NoisePredictor, TimeGrid};
use crate::numerics::RngStream;
use crate::operators::{LinearOperator, Observation};
use crate::{Error, Result, Vector};

/// Per-step state shared by the three stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    pub x_t: Vector,
    pub t_cur: usize,
    pub t_prev: usize,
    pub ab_cur: f64,
    pub ab_prev: f64,
    /// `eps(x_t, t_cur)`, evaluated once.
    pub eps: Vector,
    /// Sampler output `x_{0,t_i}`.
    pub x0: Vector,
    /// Corrected estimate from the previous step, absent at the first step.
    pub prev_xhat: Option<Vector>,
}

impl StepContext {
    /// `sqrt(1 - ab)` at `t_prev`.
    pub fn sigma_prev(&self) -> f64 {
        (1.0 - self.ab_prev).sqrt()
    }
}

/// An algorithm bound to a noise predictor.
#[derive(Clone, Copy)]
pub struct Solver<'a> {
    model: &'a dyn NoisePredictor,
    params: AlgoParams,
}

impl std::fmt::Debug for Solver<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl<'a> Solver<'a> {
    pub fn new(model: &'a dyn NoisePredictor, params: AlgoParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { model, params })
    }

    pub fn params(&self) -> &AlgoParams {
        &self.params
    }

    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm
    }

    pub fn model(&self) -> &'a dyn NoisePredictor {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Rejects observations the algorithm cannot handle.
    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        if obs.op.input_dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "operator input {} for a {}-dimensional model",
                obs.op.input_dim(),
                self.dim()
            )));
        }
        if self.algorithm().requires_linear() && !obs.op.is_linear() {
            return Err(Error::UnsupportedOperator(format!(
                "{} needs a linear operator",
                self.algorithm()
            )));
        }
        Ok(())
    }

    /// Evaluates `eps` and the sampler at `(x_t, t_cur)`.
    pub fn begin_step(
        &self,
        x_t: Vector,
        t_cur: usize,
        t_prev: usize,
        prev_xhat: Option<Vector>,
        stream: &mut RngStream,
    ) -> Result<StepContext> {
        if t_cur == 0 || t_prev >= t_cur {
            return Err(Error::InvalidGrid(format!(
                "step {t_cur} -> {t_prev} is not a descending step"
            )));
        }
        let ab_cur = self.model.alphabar(t_cur)?;
        let ab_prev = self.model.alphabar(t_prev)?;
        let eps = self.model.eps(&x_t, t_cur)?;
        let x0 = self.sample_phi(&x_t, t_cur, &eps, stream)?;
        Ok(StepContext {
            x_t,
            t_cur,
            t_prev,
            ab_cur,
            ab_prev,
            eps,
            x0,
            prev_xhat,
        })
    }

    /// Sampler: Tweedie, or for DAPS a deterministic `k`-step DDIM run whose
    /// first step reuses `eps`.
    pub fn sample_phi(&self, x_t: &Vector, t: usize, eps: &Vector, stream: &mut RngStream) -> Result<Vector> {
        let ab = self.model.alphabar(t)?;
        if self.algorithm() != Algorithm::Daps {
            return Ok(tweedie_from_eps(x_t, eps, ab));
        }
        let k = self.params.daps.k_ddim.min(t);
        let grid = crate::diffusion::schedule::even_grid(t, k)?;
        let mut cur = x_t.clone();
        for (n, (_, from, to)) in grid.steps_desc().enumerate() {
            cur = if n == 0 {
                ddim_step_with_eps(&cur, eps, ab, self.model.alphabar(to)?, 0.0, None, stream)?
            } else {
                ddim_step(self.model, &cur, from, to, 0.0, None, stream)?
            };
        }
        Ok(cur)
    }

    /// Corrector applied to the sampler output.
    pub fn correct(&self, ctx: &StepContext, obs: &Observation, stream: &mut RngStream) -> Result<Vector> {
        self.correct_from(ctx, &ctx.x0, obs, stream)
    }

    /// Corrector applied to an arbitrary clean estimate `x0` in place of the
    /// sampler output (the rest of `ctx` is used as is).
    pub fn correct_from(
        &self,
        ctx: &StepContext,
        x0: &Vector,
        obs: &Observation,
        stream: &mut RngStream,
    ) -> Result<Vector> {
        match self.algorithm() {
            Algorithm::Ddrm => self.corr_ddrm(ctx, x0, obs),
            Algorithm::Ddnm => self.corr_ddnm(ctx, x0, obs),
            Algorithm::Dps => self.corr_dps(ctx, x0, obs),
            Algorithm::Pigdm => self.corr_pigdm(ctx, x0, obs),
            Algorithm::Reddiff => self.corr_reddiff(ctx, x0, obs),
            Algorithm::Diffpir => self.corr_diffpir(ctx, x0, obs),
            Algorithm::Dmps => self.corr_dmps(ctx, x0, obs),
            Algorithm::Resample => self.corr_resample(x0, obs),
            Algorithm::Daps => self.corr_daps(ctx, x0, obs, stream),
        }
    }

    /// Noiser: maps a corrected estimate to `x_{t_{i-1}}`.
    pub fn noise(&self, ctx: &StepContext, xhat: &Vector, obs: &Observation, stream: &mut RngStream) -> Result<Vector> {
        let eta = self.params.eta;
        match self.algorithm() {
            Algorithm::Ddrm | Algorithm::Ddnm => self.noiser_spectral(ctx, xhat, obs, stream),
            Algorithm::Dps | Algorithm::Pigdm => self.noiser_ddim(ctx, xhat, eta, stream),
            Algorithm::Dmps => self.noiser_dmps(ctx, xhat, eta, stream),
            Algorithm::Reddiff | Algorithm::Daps => self.noiser_direct(ctx, xhat, stream),
            Algorithm::Diffpir => self.noiser_diffpir(ctx, xhat, eta, stream),
            Algorithm::Resample => self.noiser_resample(ctx, xhat, stream),
        }
    }

    /// Runs the solver down `grid` from `x_{t_S} ~ N(0, I)` and returns the
    /// last corrected estimate.
    pub fn run(&self, obs: &Observation, grid: &TimeGrid, stream: &mut RngStream) -> Result<Vector> {
        self.run_with(obs, grid, stream, |_, _, xhat| Ok(xhat))
    }

    /// Like [`run`](Self::run) with `hook(i, ctx, x_hat)` replacing each
    /// corrected estimate before it is re-noised. The value returned by the
    /// hook is also what the next step sees as its previous estimate.
    pub fn run_with<F>(&self, obs: &Observation, grid: &TimeGrid, stream: &mut RngStream, mut hook: F) -> Result<Vector>
    where
        F: FnMut(usize, &StepContext, Vector) -> Result<Vector>,
    {
        self.check_observation(obs)?;
        if grid.t(grid.steps()) > self.model.schedule().horizon() {
            return Err(Error::InvalidGrid("grid exceeds the schedule horizon".into()));
        }
        let mut x = stream.standard_normal(self.dim());
        let mut prev: Option<Vector> = None;
        for (i, t_cur, t_prev) in grid.steps_desc() {
            let ctx = self.begin_step(x, t_cur, t_prev, prev.take(), stream)?;
            let xhat = self.correct(&ctx, obs, stream)?;
            let xt = hook(i, &ctx, xhat)?;
            if !crate::numerics::all_finite(&xt) {
                return Err(Error::Numeric(format!("non-finite estimate at t = {t_cur}")));
            }
            if t_prev == 0 {
                return Ok(xt);
            }
            x = self.noise(&ctx, &xt, obs, stream)?;
            prev = Some(xt);
        }
        Err(Error::InvalidGrid("grid does not end at 0".into()))
    }
}

fn linear_op(obs: &Observation, algo: Algorithm) -> Result<&LinearOperator> {
    obs.linear()
        .ok_or_else(|| Error::UnsupportedOperator(format!("{algo} needs a linear operator")))
}

#[cfg(test)]
mod tests;
