//! Observation model `y = A(x0) + sigma_y n`.

pub mod linear;
pub mod nonlinear;

use serde::{Deserialize, Serialize};

pub use linear::{gaussian_kernel, walsh_hadamard, LinearOperator, OperatorKind, Subspace};
pub use nonlinear::NonlinearOperator;

use crate::numerics::{purpose, stream_id, RngStream};
use crate::{Error, Matrix, Result, Vector};

/// Operator description as it appears in experiment configs. The signal
/// dimension is supplied separately by the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Mask {
        keep: Vec<usize>,
    },
    RandomMask {
        keep_ratio: f64,
        #[serde(default)]
        seed: u64,
    },
    #[serde(alias = "avgpool")]
    AvgPool {
        factor: usize,
    },
    Blur {
        kernel: Vec<f64>,
    },
    GaussianBlur {
        sigma: f64,
        radius: usize,
    },
    Hadamard {
        keep_ratio: f64,
        #[serde(default)]
        seed: u64,
    },
    Dense {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    },
    NonlinearBlur {
        #[serde(default)]
        kernel: Option<Vec<f64>>,
        #[serde(default = "default_nl_sigma")]
        sigma: f64,
        #[serde(default = "default_nl_radius")]
        radius: usize,
        scale: f64,
    },
}

fn default_nl_sigma() -> f64 {
    1.5
}

fn default_nl_radius() -> usize {
    4
}

impl OperatorSpec {
    pub fn build(&self, n: usize) -> Result<ObservationOp> {
        let op_stream = |seed: u64| RngStream::new(seed, stream_id(purpose::OPERATOR, 0));
        let lin = match self {
            OperatorSpec::Mask { keep } => LinearOperator::mask(n, keep)?,
            OperatorSpec::RandomMask { keep_ratio, seed } => {
                LinearOperator::random_mask(n, *keep_ratio, &mut op_stream(*seed))?
            }
            OperatorSpec::AvgPool { factor } => LinearOperator::avgpool(n, *factor)?,
            OperatorSpec::Blur { kernel } => LinearOperator::blur(n, kernel)?,
            OperatorSpec::GaussianBlur { sigma, radius } => {
                LinearOperator::blur(n, &gaussian_kernel(*sigma, *radius)?)?
            }
            OperatorSpec::Hadamard { keep_ratio, seed } => {
                LinearOperator::random_hadamard(n, *keep_ratio, &mut op_stream(*seed))?
            }
            OperatorSpec::Dense { rows, cols, data } => {
                if *cols != n || data.len() != rows * cols {
                    return Err(Error::OperatorSpec(format!(
                        "dense matrix {rows}x{cols} with {} entries for signal dimension {n}",
                        data.len()
                    )));
                }
                LinearOperator::dense(&Matrix::from_row_slice(*rows, *cols, data))?
            }
            OperatorSpec::NonlinearBlur {
                kernel,
                sigma,
                radius,
                scale,
            } => {
                let k = match kernel {
                    Some(k) => k.clone(),
                    None => gaussian_kernel(*sigma, *radius)?,
                };
                return Ok(ObservationOp::Nonlinear(NonlinearOperator::new(n, k, *scale)?));
            }
        };
        Ok(ObservationOp::Linear(lin))
    }
}

/// Either kind of forward model.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOp {
    Linear(LinearOperator),
    Nonlinear(NonlinearOperator),
}

impl ObservationOp {
    pub fn input_dim(&self) -> usize {
        match self {
            ObservationOp::Linear(a) => a.input_dim(),
            ObservationOp::Nonlinear(a) => a.dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ObservationOp::Linear(a) => a.output_dim(),
            ObservationOp::Nonlinear(a) => a.dim(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearOperator> {
        match self {
            ObservationOp::Linear(a) => Some(a),
            ObservationOp::Nonlinear(_) => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ObservationOp::Linear(_))
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        match self {
            ObservationOp::Linear(a) => a.apply(x),
            ObservationOp::Nonlinear(a) => a.apply(x),
        }
    }

    /// `J_A(x)^T v`; for linear operators this is the adjoint.
    pub fn vjp(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        match self {
            ObservationOp::Linear(a) => {
                if x.len() != a.input_dim() {
                    return Err(Error::Dimension(format!(
                        "signal of length {} for operator input {}",
                        x.len(),
                        a.input_dim()
                    )));
                }
                a.apply_adjoint(v)
            }
            ObservationOp::Nonlinear(a) => a.vjp(x, v),
        }
    }

    /// `J^T (A(x) - y)`, half the gradient of `||y - A(x)||^2`.
    pub fn data_grad(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        let r = self.apply(x)? - y;
        self.vjp(x, &r)
    }

    /// `||y - A(x)||^2`.
    pub fn residual_sq(&self, x: &Vector, y: &Vector) -> Result<f64> {
        Ok((self.apply(x)? - y).norm_squared())
    }
}

/// A measurement together with its forward model and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vector,
    pub op: ObservationOp,
    pub sigma_y: f64,
}

impl Observation {
    pub fn new(y: Vector, op: ObservationOp, sigma_y: f64) -> Result<Self> {
        if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
            return Err(Error::Parameter(format!("sigma_y must be nonnegative, got {sigma_y}")));
        }
        if y.len() != op.output_dim() {
            return Err(Error::Dimension(format!(
                "observation of length {} for operator output {}",
                y.len(),
                op.output_dim()
            )));
        }
        if !crate::numerics::all_finite(&y) {
            return Err(Error::Numeric("observation contains non-finite values".into()));
        }
        Ok(Self { y, op, sigma_y })
    }

    /// `y = A(x) + sigma_y n` with `n` drawn from `stream`. No draw is made
    /// when `sigma_y = 0`.
    pub fn generate(x: &Vector, op: ObservationOp, sigma_y: f64, stream: &mut RngStream) -> Result<Self> {
        let mut y = op.apply(x)?;
        if sigma_y > 0.0 {
            y += stream.standard_normal(y.len()) * sigma_y;
        }
        Self::new(y, op, sigma_y)
    }

    pub fn linear(&self) -> Option<&LinearOperator> {
        self.op.as_linear()
    }
}
