use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cumulative signal-retention table `alphabar[t]` for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    horizon: usize,
    alphabar: Vec<f64>,
}

/// Serializable description of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Linear {
        #[serde(default = "default_horizon")]
        horizon: usize,
        #[serde(default = "default_beta_start")]
        beta_start: f64,
        #[serde(default = "default_beta_end")]
        beta_end: f64,
    },
    Table {
        alphabar: Vec<f64>,
    },
}

fn default_horizon() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Linear {
            horizon: default_horizon(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        match self {
            ScheduleSpec::Linear {
                horizon,
                beta_start,
                beta_end,
            } => DiffusionSchedule::linear(*horizon, *beta_start, *beta_end),
            ScheduleSpec::Table { alphabar } => DiffusionSchedule::from_alphabar(alphabar.clone()),
        }
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    /// DDPM linear-beta schedule, `beta` evenly spaced from `beta_start` at
    /// `t = 1` to `beta_end` at `t = horizon`.
    pub fn linear(horizon: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("schedule horizon must be at least 1".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alphabar = Vec::with_capacity(horizon + 1);
        alphabar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=horizon {
            let frac = if horizon == 1 {
                0.0
            } else {
                (s - 1) as f64 / (horizon - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alphabar.push(acc);
        }
        Self::from_alphabar(alphabar)
    }

    /// Schedule from an explicit table. Requires `alphabar[0] = 1`, entries in
    /// `(0, 1]` and non-increasing.
    pub fn from_alphabar(alphabar: Vec<f64>) -> Result<Self> {
        if alphabar.len() < 2 {
            return Err(Error::Parameter("alphabar table needs at least two entries".into()));
        }
        if alphabar[0] != 1.0 {
            return Err(Error::Parameter(format!("alphabar[0] must be 1, got {}", alphabar[0])));
        }
        for (t, w) in alphabar.windows(2).enumerate() {
            if !(w[1] > 0.0 && w[1] <= w[0]) {
                return Err(Error::Parameter(format!(
                    "alphabar must be in (0,1] and non-increasing; alphabar[{}] = {}",
                    t + 1,
                    w[1]
                )));
            }
        }
        Ok(Self {
            horizon: alphabar.len() - 1,
            alphabar,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn alphabar(&self, t: usize) -> Result<f64> {
        self.alphabar
            .get(t)
            .copied()
            .ok_or_else(|| Error::Bounds(format!("timestep {t} outside schedule horizon {}", self.horizon)))
    }

    pub fn table(&self) -> &[f64] {
        &self.alphabar
    }
}

/// Descending timestep grid `t_S > ... > t_1 > t_0 = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    timesteps: Vec<usize>,
}

impl TimeGrid {
    pub fn from_timesteps(timesteps: Vec<usize>, horizon: usize) -> Result<Self> {
        if timesteps.len() < 2 {
            return Err(Error::InvalidGrid("grid needs at least one step".into()));
        }
        if *timesteps.last().unwrap() != 0 {
            return Err(Error::InvalidGrid("grid must end at t = 0".into()));
        }
        if timesteps[0] > horizon {
            return Err(Error::InvalidGrid(format!(
                "t = {} exceeds horizon {horizon}",
                timesteps[0]
            )));
        }
        if timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidGrid(format!(
                "grid must be strictly decreasing: {timesteps:?}"
            )));
        }
        Ok(Self { timesteps })
    }

    /// Number of steps `S`.
    pub fn steps(&self) -> usize {
        self.timesteps.len() - 1
    }

    /// All timesteps, `t_S` first.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// `t_i` for `i` in `0..=S`.
    pub fn t(&self, i: usize) -> usize {
        self.timesteps[self.steps() - i]
    }

    /// `(i, t_i, t_{i-1})` for `i = S..=1`.
    pub fn steps_desc(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let s = self.steps();
        self.timesteps
            .windows(2)
            .enumerate()
            .map(move |(k, w)| (s - k, w[0], w[1]))
    }
}

/// Evenly spaced grid, `t_i = round(i * T / S)`.
pub fn make_time_grid(schedule: &DiffusionSchedule, steps: usize) -> Result<TimeGrid> {
    even_grid(schedule.horizon(), steps)
}

pub(crate) fn even_grid(span: usize, steps: usize) -> Result<TimeGrid> {
    if steps == 0 || steps > span {
        return Err(Error::InvalidGrid(format!(
            "step count {steps} must be within 1..={span}"
        )));
    }
    // Round half up in integer arithmetic.
    let timesteps = (0..=steps)
        .rev()
        .map(|i| (2 * i * span + steps) / (2 * steps))
        .collect();
    TimeGrid::from_timesteps(timesteps, span)
}
