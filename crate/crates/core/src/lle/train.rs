use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coeffs::{extrapolate, LleCoefficients, StepCoeffs};
use super::loss::{basis_matrix, batch_loss, loss, loss_grad_gamma, solve_ls_closed_form, PluginKind};
use super::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::canonical::{Algorithm, Solver, StepContext};
use crate::diffusion::{ddim_sample, make_time_grid, NoisePredictor, TimeGrid};
use crate::numerics::{all_finite, purpose, RngStream};
use crate::operators::{LinearOperator, Observation, ObservationOp};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrRule {
    /// `base / S`, base 0.04.
    #[default]
    Constant,
    /// `base * ab(t_{i+1}) / S`, base 0.2.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[serde(alias = "adaptive-linear", alias = "adaptive_linear")]
    Adaptive,
    #[serde(alias = "soft-nonlinear", alias = "soft_nonlinear")]
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_refs: usize,
    pub ref_steps: usize,
    pub plugin: PluginKind,
    /// Perceptual weight; 0.1 with a plugin and 0 without when unset.
    pub omega: Option<f64>,
    pub epochs: usize,
    pub warmup: usize,
    pub lr_rule: LrRule,
    /// Overrides the rule's base rate.
    pub lr_base: Option<f64>,
    /// Adaptive for linear operators and soft otherwise when unset.
    pub init_mode: Option<InitMode>,
    /// Variance of the random entries of the initial coefficients.
    pub init_noise_var: f64,
    pub noisy_gt: bool,
    pub decoupled: bool,
    /// Solve pure squared-error steps in closed form.
    pub closed_form: bool,
    pub optimizer: OptimizerKind,
    pub base_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_refs: 50,
            ref_steps: 999,
            plugin: PluginKind::GradientDomain,
            omega: None,
            epochs: 100,
            warmup: 50,
            lr_rule: LrRule::Constant,
            lr_base: None,
            init_mode: None,
            init_noise_var: 1e-6,
            noisy_gt: false,
            decoupled: false,
            closed_form: false,
            optimizer: OptimizerKind::ScheduleFree,
            base_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn omega(&self) -> f64 {
        self.omega.unwrap_or(match self.plugin {
            PluginKind::None => 0.0,
            PluginKind::GradientDomain => 0.1,
        })
    }

    /// Whether the objective is the bare squared error.
    pub fn pure_mse(&self) -> bool {
        self.omega() == 0.0 || self.plugin == PluginKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_refs == 0 {
            return Err(Error::Config("n_refs must be at least 1".into()));
        }
        if self.ref_steps == 0 {
            return Err(Error::Config("ref_steps must be at least 1".into()));
        }
        let omega = self.omega();
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::Config(format!(
                "omega must be finite and nonnegative, got {omega}"
            )));
        }
        if !(self.init_noise_var >= 0.0) || !self.init_noise_var.is_finite() {
            return Err(Error::Config("init_noise_var must be finite and nonnegative".into()));
        }
        if let Some(b) = self.lr_base {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Config(format!("lr_base must be positive, got {b}")));
            }
        }
        Ok(())
    }

    /// Learning rate at step `i` of `grid`.
    pub fn learning_rate(&self, model: &dyn NoisePredictor, grid: &TimeGrid, i: usize) -> Result<f64> {
        let s = grid.steps() as f64;
        Ok(match self.lr_rule {
            LrRule::Constant => self.lr_base.unwrap_or(0.04) / s,
            LrRule::Dynamic => {
                let next = if i < grid.steps() { grid.t(i + 1) } else { grid.t(i) };
                self.lr_base.unwrap_or(0.2) * model.alphabar(next)? / s
            }
        })
    }

    fn init_mode_for(&self, op: &ObservationOp) -> InitMode {
        self.init_mode.unwrap_or(if op.is_linear() {
            InitMode::Adaptive
        } else {
            InitMode::Soft
        })
    }
}

/// Ground truths and their observations.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub truths: Vec<Vector>,
    pub observations: Vec<Observation>,
}

impl TrainingSet {
    /// Observes each truth with the per-sample noise stream of `seed`.
    pub fn observe(truths: Vec<Vector>, op: &ObservationOp, sigma_y: f64, seed: u64) -> Result<Self> {
        let observations = truths
            .par_iter()
            .enumerate()
            .map(|(n, x)| {
                let mut s = RngStream::for_sample(seed, purpose::OBSERVATION_NOISE, n);
                Observation::generate(x, op.clone(), sigma_y, &mut s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { truths, observations })
    }

    /// References from the model plus their observations.
    pub fn generate(
        model: &dyn NoisePredictor,
        op: &ObservationOp,
        sigma_y: f64,
        config: &TrainConfig,
    ) -> Result<Self> {
        let truths = generate_references(model, config.n_refs, config.ref_steps, config.base_seed)?;
        Self::observe(truths, op, sigma_y, config.base_seed)
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }
}

/// `n` deterministic DDIM samples on a `steps`-step grid.
pub fn generate_references(model: &dyn NoisePredictor, n: usize, steps: usize, seed: u64) -> Result<Vec<Vector>> {
    let grid = make_time_grid(model.schedule(), steps)?;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut s = RngStream::for_sample(seed, purpose::REFERENCE, k);
            ddim_sample(model, &grid, 0.0, &mut s)
        })
        .collect()
}

/// Training target at one step: `x0`, or the algorithm's corrector applied
/// to `x0` for the noisy ground-truth variant.
pub fn make_ground_truth(
    solver: &Solver<'_>,
    ctx: &StepContext,
    x0: &Vector,
    obs: &Observation,
    noisy_gt: bool,
) -> Result<Vector> {
    if !noisy_gt {
        return Ok(x0.clone());
    }
    if !matches!(solver.algorithm(), Algorithm::Ddrm | Algorithm::Ddnm) {
        return Err(Error::Config(format!(
            "noisy ground truth is defined for DDRM and DDNM, not {}",
            solver.algorithm()
        )));
    }
    // Both correctors are deterministic; the stream is never drawn from.
    solver.correct_from(ctx, x0, obs, &mut RngStream::new(0, 0))
}

/// Initial coefficients for a step with `len` bases. `prev_loss` is the
/// batch loss of the previous extrapolated estimate, `xhat_loss` that of the
/// current corrected estimate. Unset entries get `N(0, noise_var)` draws.
#[allow(clippy::too_many_arguments)]
pub fn init_coeffs(
    mode: InitMode,
    len: usize,
    decoupled: bool,
    prev_loss: Option<f64>,
    xhat_loss: f64,
    alphabar: f64,
    noise_var: f64,
    stream: &mut RngStream,
) -> Result<Vector> {
    if len == 0 {
        return Err(Error::Dimension("no bases to combine".into()));
    }
    let mut base = Vector::zeros(len);
    let mut set = vec![false; len];
    let last = len - 1;
    match prev_loss {
        Some(prev) if len > 1 && prev < xhat_loss => match mode {
            InitMode::Adaptive => {
                base[last - 1] = 1.0;
                set[last - 1] = true;
            }
            InitMode::Soft => {
                base[last - 1] = alphabar;
                base[last] = 1.0 - alphabar;
                set[last - 1] = true;
                set[last] = true;
            }
        },
        _ => {
            base[last] = 1.0;
            set[last] = true;
        }
    }
    let copies = if decoupled { 2 } else { 1 };
    let mut params = Vector::from_iterator(len * copies, (0..copies).flat_map(|_| base.iter().copied()));
    if noise_var > 0.0 {
        let noise = stream.standard_normal(params.len()) * noise_var.sqrt();
        for (k, p) in params.iter_mut().enumerate() {
            if !set[k % len] {
                *p += noise[k];
            }
        }
    }
    Ok(params)
}

/// Optimization record of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepReport {
    pub step: usize,
    pub timestep: usize,
    pub init_loss: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
    /// Loss after each epoch, starting with the initial loss.
    pub trace: Vec<f64>,
}

/// Full-batch optimization of one step's coefficients from `init`. Returns
/// the lowest-loss parameters seen, so the final loss never exceeds the
/// initial one.
pub fn train_timestep(
    bases: &[Matrix],
    x_gts: &[Vector],
    init: Vector,
    lr: f64,
    config: &TrainConfig,
    step: usize,
    timestep: usize,
) -> Result<(Vector, TimestepReport)> {
    let omega = config.omega();
    let plugin = config.plugin.plugin();
    let diverged = |message: String| Error::TrainingDiverged { timestep, message };
    let init_loss = batch_loss(bases, x_gts, &init, omega, plugin)?;
    if !init_loss.is_finite() {
        return Err(diverged(format!("initial loss {init_loss}")));
    }
    let mut trace = vec![init_loss];
    let mut best = (init_loss, init.clone(), 0);
    if config.closed_form && config.pure_mse() {
        let cand = solve_ls_closed_form(bases, x_gts)?;
        let l = batch_loss(bases, x_gts, &cand, 0.0, plugin)?;
        trace.push(l);
        if l < best.0 {
            best = (l, cand, 1);
        }
    } else if config.epochs > 0 {
        let mut state = OptimizerState::new(config.optimizer, OptimizerConfig::new(lr, config.warmup), init);
        for epoch in 1..=config.epochs {
            let (_, g) = loss_grad_gamma(bases, x_gts, &state.eval_point(), omega, plugin)?;
            if !all_finite(&g) {
                return Err(diverged(format!("non-finite gradient at epoch {epoch}")));
            }
            state.step(&g)?;
            let l = batch_loss(bases, x_gts, state.params(), omega, plugin)?;
            if !l.is_finite() {
                return Err(diverged(format!("loss {l} at epoch {epoch}")));
            }
            trace.push(l);
            if l < best.0 {
                best = (l, state.params().clone(), epoch);
            }
        }
    }
    let report = TimestepReport {
        step,
        timestep,
        init_loss,
        final_loss: best.0,
        best_epoch: best.2,
        trace,
    };
    Ok((best.1, report))
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub coeffs: LleCoefficients,
    /// One report per step, `i = S` first.
    pub reports: Vec<TimestepReport>,
    /// Final estimates `x~_{0,t_1}` of the training samples.
    pub estimates: Vec<Vector>,
}

/// Per-sample trajectory state during training.
struct Track {
    stream: RngStream,
    x: Option<Vector>,
    prev: Option<Vector>,
    history: Vec<Vector>,
    ctx: Option<StepContext>,
    xhat: Vector,
    x_gt: Vector,
    bases: Matrix,
}

fn decoupling_op(obs: &Observation, decoupled: bool) -> Result<Option<&LinearOperator>> {
    if !decoupled {
        return Ok(None);
    }
    obs.linear()
        .map(Some)
        .ok_or_else(|| Error::Config("decoupled coefficients need a linear operator".into()))
}

/// Batch seen by the optimizer at one step.
#[derive(Debug)]
pub struct StepBatch<'a> {
    pub step: usize,
    pub timestep: usize,
    /// Extrapolated estimates of earlier steps per sample, `t_S` first.
    pub histories: Vec<&'a [Vector]>,
    pub xhats: Vec<&'a Vector>,
    pub x_gts: Vec<&'a Vector>,
}

/// Per-step training along `grid`. Sample `n` follows the trajectory stream
/// `n` of `config.base_seed`, so [`infer`] with that stream replays it.
pub fn train(solver: &Solver<'_>, set: &TrainingSet, grid: &TimeGrid, config: &TrainConfig) -> Result<TrainOutput> {
    train_observed(solver, set, grid, config, |_| Ok(()))
}

/// [`train`] with `observer` called on each step's batch before optimization.
pub fn train_observed<F>(
    solver: &Solver<'_>,
    set: &TrainingSet,
    grid: &TimeGrid,
    config: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(&StepBatch<'_>) -> Result<()>,
{
    config.validate()?;
    if set.is_empty() || set.truths.len() != set.observations.len() {
        return Err(Error::Config(format!(
            "training set with {} truths and {} observations",
            set.truths.len(),
            set.observations.len()
        )));
    }
    for obs in &set.observations {
        solver.check_observation(obs)?;
        decoupling_op(obs, config.decoupled)?;
    }
    if grid.t(grid.steps()) > solver.model().schedule().horizon() {
        return Err(Error::InvalidGrid("grid exceeds the schedule horizon".into()));
    }
    let mode = config.init_mode_for(&set.observations[0].op);
    let omega = config.omega();
    let plugin = config.plugin.plugin();
    // Without optimization the random entries would only perturb the selection.
    let noise_var = if config.epochs == 0 && !config.closed_form {
        0.0
    } else {
        config.init_noise_var
    };
    let dim = solver.dim();

    let mut tracks: Vec<Track> = (0..set.len())
        .map(|n| {
            let mut stream = RngStream::for_sample(config.base_seed, purpose::TRAJECTORY, n);
            let x = stream.standard_normal(dim);
            Track {
                stream,
                x: Some(x),
                prev: None,
                history: Vec::new(),
                ctx: None,
                xhat: Vector::zeros(0),
                x_gt: Vector::zeros(0),
                bases: Matrix::zeros(0, 0),
            }
        })
        .collect();

    let mut coeffs = LleCoefficients::identity(grid, config.decoupled);
    let mut reports = Vec::with_capacity(grid.steps());
    let mut estimates = Vec::new();

    for (i, t_cur, t_prev) in grid.steps_desc() {
        tracks
            .par_iter_mut()
            .zip(set.truths.par_iter().zip(set.observations.par_iter()))
            .try_for_each(|(tr, (x0, obs))| -> Result<()> {
                let x = tr.x.take().expect("trajectory state");
                let ctx = solver.begin_step(x, t_cur, t_prev, tr.prev.take(), &mut tr.stream)?;
                tr.xhat = solver.correct(&ctx, obs, &mut tr.stream)?;
                tr.x_gt = make_ground_truth(solver, &ctx, x0, obs, config.noisy_gt)?;
                tr.bases = basis_matrix(&tr.history, &tr.xhat, decoupling_op(obs, config.decoupled)?)?;
                tr.ctx = Some(ctx);
                Ok(())
            })?;

        observer(&StepBatch {
            step: i,
            timestep: t_cur,
            histories: tracks.iter().map(|t| t.history.as_slice()).collect(),
            xhats: tracks.iter().map(|t| &t.xhat).collect(),
            x_gts: tracks.iter().map(|t| &t.x_gt).collect(),
        })?;
        let bases: Vec<Matrix> = tracks.iter().map(|t| t.bases.clone()).collect();
        let x_gts: Vec<Vector> = tracks.iter().map(|t| t.x_gt.clone()).collect();
        let mean_loss = |pick: &dyn Fn(&Track) -> &Vector| -> Result<f64> {
            let mut total = 0.0;
            for t in &tracks {
                total += loss(pick(t), &t.x_gt, omega, plugin)?;
            }
            Ok(total / tracks.len() as f64)
        };
        let xhat_loss = mean_loss(&|t| &t.xhat)?;
        let prev_loss = if tracks[0].history.is_empty() {
            None
        } else {
            Some(mean_loss(&|t| t.history.last().expect("history"))?)
        };
        let len = tracks[0].history.len() + 1;
        let ab = solver.model().alphabar(t_cur)?;
        let mut init_stream = RngStream::for_sample(config.base_seed, purpose::COEFF_INIT, i);
        let init = init_coeffs(
            mode,
            len,
            config.decoupled,
            prev_loss,
            xhat_loss,
            ab,
            noise_var,
            &mut init_stream,
        )?;
        let lr = config.learning_rate(solver.model(), grid, i)?;
        let (params, report) = train_timestep(&bases, &x_gts, init, lr, config, i, t_cur)?;
        coeffs.set(i, StepCoeffs::from_params(&params, config.decoupled)?)?;
        reports.push(report);

        let step = coeffs.at(i)?;
        tracks
            .par_iter_mut()
            .zip(set.observations.par_iter())
            .try_for_each(|(tr, obs)| -> Result<()> {
                let xt = extrapolate(step, &tr.history, &tr.xhat, decoupling_op(obs, config.decoupled)?)?;
                if !all_finite(&xt) {
                    return Err(Error::TrainingDiverged {
                        timestep: t_cur,
                        message: "non-finite extrapolated estimate".into(),
                    });
                }
                let ctx = tr.ctx.take().expect("step context");
                if t_prev != 0 {
                    tr.x = Some(solver.noise(&ctx, &xt, obs, &mut tr.stream)?);
                    tr.prev = Some(xt.clone());
                }
                tr.history.push(xt);
                Ok(())
            })?;
        if t_prev == 0 {
            estimates = tracks
                .iter_mut()
                .map(|t| t.history.pop().expect("final estimate"))
                .collect();
        }
    }
    Ok(TrainOutput {
        coeffs,
        reports,
        estimates,
    })
}

/// Solver run with every corrected estimate replaced by its extrapolation.
pub fn infer(
    solver: &Solver<'_>,
    obs: &Observation,
    grid: &TimeGrid,
    coeffs: &LleCoefficients,
    stream: &mut RngStream,
) -> Result<Vector> {
    coeffs.check_grid(grid)?;
    let op = decoupling_op(obs, coeffs.decoupled())?;
    let mut history: Vec<Vector> = Vec::with_capacity(grid.steps());
    solver.run_with(obs, grid, stream, |i, _, xhat| {
        let xt = extrapolate(coeffs.at(i)?, &history, &xhat, op)?;
        history.push(xt.clone());
        Ok(xt)
    })
}

/// `timestep,epoch,loss` rows for every report.
pub fn loss_trace_csv(reports: &[TimestepReport]) -> String {
    let mut out = String::from("timestep,epoch,loss\n");
    for r in reports {
        for (e, l) in r.trace.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:e}", r.timestep, e, l);
        }
    }
    out
}

pub fn write_loss_trace(reports: &[TimestepReport], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, loss_trace_csv(reports))?;
    Ok(())
}
