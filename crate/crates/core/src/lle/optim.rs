//! Schedule-free AdamW, with a plain Adam fallback.
//!
//! Schedule-free recipe: the gradient is taken at `y = (1 - b1) z + b1 x`,
//! `z` takes an Adam-normalized step with warmup-scaled rate, and the
//! returned iterate `x` is a running average of `z` weighted by `lr_t^2`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: usize,
}

impl OptimizerConfig {
    pub fn new(lr: f64, warmup: usize) -> Self {
        Self {
            lr,
            warmup,
            ..Self::default()
        }
    }

    /// `lr * min(1, step / warmup)`; `step` counts from 1.
    pub fn effective_lr(&self, step: usize) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup as f64).min(1.0)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    ScheduleFree,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    config: OptimizerConfig,
    /// Averaged iterate (schedule-free) or the parameters (Adam).
    x: Vector,
    /// Base sequence (schedule-free) or first moment (Adam).
    z: Vector,
    v: Vector,
    step: usize,
    lr_sq_sum: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, config: OptimizerConfig, init: Vector) -> Self {
        let n = init.len();
        let z = match kind {
            OptimizerKind::ScheduleFree => init.clone(),
            OptimizerKind::Adam => Vector::zeros(n),
        };
        Self {
            kind,
            config,
            x: init,
            z,
            v: Vector::zeros(n),
            step: 0,
            lr_sq_sum: 0.0,
        }
    }

    pub fn schedule_free(config: OptimizerConfig, init: Vector) -> Self {
        Self::new(OptimizerKind::ScheduleFree, config, init)
    }

    pub fn params(&self) -> &Vector {
        &self.x
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Point at which the next gradient must be evaluated.
    pub fn eval_point(&self) -> Vector {
        match self.kind {
            OptimizerKind::ScheduleFree => &self.z * (1.0 - self.config.beta1) + &self.x * self.config.beta1,
            OptimizerKind::Adam => self.x.clone(),
        }
    }

    /// Applies one update with `grad` taken at [`eval_point`](Self::eval_point).
    pub fn step(&mut self, grad: &Vector) -> Result<()> {
        if grad.len() != self.x.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for {} parameters",
                grad.len(),
                self.x.len()
            )));
        }
        let c = self.config;
        self.step += 1;
        let k = self.step as i32;
        let lr_t = c.effective_lr(self.step);
        let v_corr = 1.0 - c.beta2.powi(k);
        self.v = &self.v * c.beta2 + grad.component_mul(grad) * (1.0 - c.beta2);
        match self.kind {
            OptimizerKind::ScheduleFree => {
                let y = self.eval_point();
                let dir = Vector::from_fn(grad.len(), |i, _| {
                    grad[i] / ((self.v[i] / v_corr).sqrt() + c.eps) + c.weight_decay * y[i]
                });
                self.z -= dir * lr_t;
                self.lr_sq_sum += lr_t * lr_t;
                let weight = if self.lr_sq_sum > 0.0 {
                    lr_t * lr_t / self.lr_sq_sum
                } else {
                    0.0
                };
                self.x = &self.x * (1.0 - weight) + &self.z * weight;
            }
            OptimizerKind::Adam => {
                let m_corr = 1.0 - c.beta1.powi(k);
                self.z = &self.z * c.beta1 + grad * (1.0 - c.beta1);
                let dir = Vector::from_fn(grad.len(), |i, _| {
                    (self.z[i] / m_corr) / ((self.v[i] / v_corr).sqrt() + c.eps) + c.weight_decay * self.x[i]
                });
                self.x -= dir * lr_t;
            }
        }
        Ok(())
    }
}

/// Minimizes `f` from `init` for `steps` iterations and returns the final
/// parameters. `f` returns `(value, gradient)`. Fails on a non-finite
/// objective or when the final objective exceeds ten times its start.
pub fn minimize<F>(kind: OptimizerKind, config: OptimizerConfig, init: Vector, steps: usize, mut f: F) -> Result<Vector>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    let start = f(&init)?.0;
    if start == 0.0 || steps == 0 {
        return Ok(init);
    }
    let mut state = OptimizerState::new(kind, config, init);
    for _ in 0..steps {
        let (value, g) = f(&state.eval_point())?;
        if !value.is_finite() || !crate::numerics::all_finite(&g) {
            return Err(Error::Convergence(format!(
                "objective became non-finite after {} steps",
                state.steps_taken()
            )));
        }
        state.step(&g)?;
    }
    let end = f(state.params())?.0;
    if !end.is_finite() || end > 10.0 * start {
        return Err(Error::Convergence(format!(
            "objective rose from {start:e} to {end:e} over {steps} steps"
        )));
    }
    Ok(state.params().clone())
}
