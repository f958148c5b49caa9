use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::TimeGrid;
use crate::operators::{LinearOperator, Subspace};
use crate::{Error, Result, Vector};

/// Coefficients at one timestep. Entry `j < S - i` weighs `x~_{0,t_{S-j}}`;
/// the last entry weighs `x^_{0,t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub enum StepCoeffs {
    Coupled(Vector),
    Decoupled { par: Vector, perp: Vector },
}

impl StepCoeffs {
    /// One-hot on the current estimate.
    pub fn identity(len: usize, decoupled: bool) -> Self {
        let mut g = Vector::zeros(len);
        g[len - 1] = 1.0;
        if decoupled {
            Self::Decoupled {
                par: g.clone(),
                perp: g,
            }
        } else {
            Self::Coupled(g)
        }
    }

    /// Number of bases combined.
    pub fn len(&self) -> usize {
        match self {
            Self::Coupled(g) => g.len(),
            Self::Decoupled { par, .. } => par.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_decoupled(&self) -> bool {
        matches!(self, Self::Decoupled { .. })
    }

    /// Flat parameter vector: `gamma`, or `gamma_par` followed by `gamma_perp`.
    pub fn to_params(&self) -> Vector {
        match self {
            Self::Coupled(g) => g.clone(),
            Self::Decoupled { par, perp } => {
                Vector::from_iterator(par.len() * 2, par.iter().chain(perp.iter()).copied())
            }
        }
    }

    pub fn from_params(params: &Vector, decoupled: bool) -> Result<Self> {
        if !decoupled {
            return Ok(Self::Coupled(params.clone()));
        }
        if !params.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "decoupled parameter vector of odd length {}",
                params.len()
            )));
        }
        let m = params.len() / 2;
        Ok(Self::Decoupled {
            par: params.rows(0, m).into_owned(),
            perp: params.rows(m, m).into_owned(),
        })
    }

    /// The same combination applied to both subspaces.
    pub fn to_decoupled(&self) -> Self {
        match self {
            Self::Coupled(g) => Self::Decoupled {
                par: g.clone(),
                perp: g.clone(),
            },
            d => d.clone(),
        }
    }
}

/// Learned coefficients for every step of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LleCoefficients {
    timesteps: Vec<usize>,
    /// `steps[k]` belongs to `i = S - k` and has `k + 1` entries.
    steps: Vec<StepCoeffs>,
}

#[derive(Serialize, Deserialize)]
struct CoeffFile {
    steps: usize,
    decoupled: bool,
    timesteps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_par: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma_perp: Option<Vec<Vec<f64>>>,
}

impl LleCoefficients {
    /// Coefficients that reproduce the base algorithm.
    pub fn identity(grid: &TimeGrid, decoupled: bool) -> Self {
        let s = grid.steps();
        Self {
            timesteps: grid.timesteps().to_vec(),
            steps: (0..s).map(|k| StepCoeffs::identity(k + 1, decoupled)).collect(),
        }
    }

    pub fn new(timesteps: Vec<usize>, steps: Vec<StepCoeffs>) -> Result<Self> {
        let c = Self { timesteps, steps };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let s = self.steps.len();
        if s == 0 || self.timesteps.len() != s + 1 {
            return Err(Error::Config(format!(
                "{} coefficient steps for {} timesteps",
                s,
                self.timesteps.len()
            )));
        }
        let decoupled = self.steps[0].is_decoupled();
        for (k, c) in self.steps.iter().enumerate() {
            if c.len() != k + 1 {
                return Err(Error::Dimension(format!(
                    "step i = {} has {} coefficients, expected {}",
                    s - k,
                    c.len(),
                    k + 1
                )));
            }
            if c.is_decoupled() != decoupled {
                return Err(Error::Config("mixed coupled and decoupled steps".into()));
            }
            if let StepCoeffs::Decoupled { par, perp } = c {
                if par.len() != perp.len() {
                    return Err(Error::Dimension("gamma_par and gamma_perp lengths differ".into()));
                }
            }
            if !crate::numerics::all_finite(&c.to_params()) {
                return Err(Error::Numeric(format!("non-finite coefficient at i = {}", s - k)));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    pub fn decoupled(&self) -> bool {
        self.steps[0].is_decoupled()
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Coefficients at step `i` (`1..=S`).
    pub fn at(&self, i: usize) -> Result<&StepCoeffs> {
        self.index(i).map(|k| &self.steps[k])
    }

    pub fn set(&mut self, i: usize, c: StepCoeffs) -> Result<()> {
        let k = self.index(i)?;
        if c.len() != k + 1 || c.is_decoupled() != self.decoupled() {
            return Err(Error::Dimension(format!("coefficients of the wrong shape for i = {i}")));
        }
        self.steps[k] = c;
        Ok(())
    }

    fn index(&self, i: usize) -> Result<usize> {
        let s = self.steps();
        if i == 0 || i > s {
            return Err(Error::Bounds(format!("step {i} outside 1..={s}")));
        }
        Ok(s - i)
    }

    /// Every step replicated into `(gamma, gamma)`.
    pub fn to_decoupled(&self) -> Self {
        Self {
            timesteps: self.timesteps.clone(),
            steps: self.steps.iter().map(StepCoeffs::to_decoupled).collect(),
        }
    }

    /// Errors unless the coefficients were built for `grid`.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.timesteps != grid.timesteps() {
            return Err(Error::Config(format!(
                "coefficients for S = {} ({:?}) used with S = {} ({:?})",
                self.steps(),
                self.timesteps,
                grid.steps(),
                grid.timesteps()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = |f: &dyn Fn(&StepCoeffs) -> Vector| -> Vec<Vec<f64>> {
            self.steps.iter().map(|c| f(c).as_slice().to_vec()).collect()
        };
        let file = if self.decoupled() {
            let par = |c: &StepCoeffs| match c {
                StepCoeffs::Decoupled { par, .. } => par.clone(),
                StepCoeffs::Coupled(g) => g.clone(),
            };
            let perp = |c: &StepCoeffs| match c {
                StepCoeffs::Decoupled { perp, .. } => perp.clone(),
                StepCoeffs::Coupled(g) => g.clone(),
            };
            CoeffFile {
                steps: self.steps(),
                decoupled: true,
                timesteps: self.timesteps.clone(),
                gamma: None,
                gamma_par: Some(rows(&par)),
                gamma_perp: Some(rows(&perp)),
            }
        } else {
            CoeffFile {
                steps: self.steps(),
                decoupled: false,
                timesteps: self.timesteps.clone(),
                gamma: Some(rows(&|c| c.to_params())),
                gamma_par: None,
                gamma_perp: None,
            }
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CoeffFile = serde_json::from_str(text)?;
        let vecs = |rows: Vec<Vec<f64>>| rows.into_iter().map(Vector::from_vec).collect::<Vec<_>>();
        let steps: Vec<StepCoeffs> = if f.decoupled {
            let (Some(par), Some(perp)) = (f.gamma_par, f.gamma_perp) else {
                return Err(Error::Config(
                    "decoupled coefficients need gamma_par and gamma_perp".into(),
                ));
            };
            if par.len() != perp.len() {
                return Err(Error::Config("gamma_par and gamma_perp step counts differ".into()));
            }
            vecs(par)
                .into_iter()
                .zip(vecs(perp))
                .map(|(par, perp)| StepCoeffs::Decoupled { par, perp })
                .collect()
        } else {
            let Some(g) = f.gamma else {
                return Err(Error::Config("coupled coefficients need gamma".into()));
            };
            vecs(g).into_iter().map(StepCoeffs::Coupled).collect()
        };
        if steps.len() != f.steps {
            return Err(Error::Config(format!(
                "file declares {} steps but holds {}",
                f.steps,
                steps.len()
            )));
        }
        Self::new(f.timesteps, steps)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// `sum_j gamma_j b_j` over `bases = [history.., xhat]`, skipping exact zeros.
fn combine(gamma: &Vector, history: &[Vector], xhat: &Vector) -> Vector {
    let last = gamma.len() - 1;
    let mut out = if gamma[last] == 1.0 {
        xhat.clone()
    } else {
        xhat * gamma[last]
    };
    for (g, h) in gamma.iter().zip(history) {
        if *g != 0.0 {
            out.axpy(*g, h, 1.0);
        }
    }
    out
}

/// Next estimate `x~_{0,t_i}` from the extrapolated history and `x^_{0,t_i}`.
pub fn extrapolate(
    coeffs: &StepCoeffs,
    history: &[Vector],
    xhat: &Vector,
    op: Option<&LinearOperator>,
) -> Result<Vector> {
    if coeffs.len() != history.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} history entries",
            coeffs.len(),
            history.len()
        )));
    }
    if let Some(h) = history.iter().find(|h| h.len() != xhat.len()) {
        return Err(Error::Dimension(format!(
            "history entry of length {} for {}",
            h.len(),
            xhat.len()
        )));
    }
    match coeffs {
        StepCoeffs::Coupled(g) => Ok(combine(g, history, xhat)),
        StepCoeffs::Decoupled { par, perp } => {
            let op = op.ok_or_else(|| Error::Config("decoupled coefficients need a linear operator".into()))?;
            if par == perp {
                return Ok(combine(par, history, xhat));
            }
            let range: Vec<Vector> = history
                .iter()
                .map(|h| op.project(h, Subspace::Range))
                .collect::<Result<_>>()?;
            let null: Vec<Vector> = history
                .iter()
                .map(|h| op.project(h, Subspace::Null))
                .collect::<Result<_>>()?;
            let (xr, xn) = op.split(xhat)?;
            Ok(combine(par, &range, &xr) + combine(perp, &null, &xn))
        }
    }
}
