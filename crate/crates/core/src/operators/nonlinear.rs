use crate::{Error, Result, Vector};

use super::linear::{circulant_column, validate_kernel};

/// `y = tanh(c * (K * x))` with `K` a symmetric circular blur.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearOperator {
    n: usize,
    kernel: Vec<f64>,
    column: Vec<f64>,
    scale: f64,
}

impl NonlinearOperator {
    pub fn new(n: usize, kernel: Vec<f64>, scale: f64) -> Result<Self> {
        validate_kernel(&kernel)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::OperatorSpec(format!("scale must be positive, got {scale}")));
        }
        if n == 0 {
            return Err(Error::OperatorSpec("zero-dimensional operator".into()));
        }
        let column = circulant_column(n, &kernel);
        Ok(Self {
            n,
            kernel,
            column,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "length {} for operator of size {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Circular convolution `K * x`. The kernel is symmetric, so this is also
    /// its own adjoint.
    pub fn convolve(&self, x: &Vector) -> Vector {
        let n = self.n;
        let c = &self.column;
        Vector::from_fn(n, |i, _| {
            c.iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(j, w)| w * x[(i + n - j) % n])
                .sum()
        })
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        Ok(self.convolve(x).map(|z| (self.scale * z).tanh()))
    }

    /// `J(x)^T v = K^T (c (1 - y^2) v)`.
    pub fn vjp(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.check(x)?;
        self.check(v)?;
        let y = self.apply(x)?;
        let inner = Vector::from_fn(self.n, |i, _| self.scale * (1.0 - y[i] * y[i]) * v[i]);
        Ok(self.convolve(&inner))
    }
}
