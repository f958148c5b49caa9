use serde::{Deserialize, Serialize};

use crate::operators::{LinearOperator, Subspace};
use crate::{Error, Matrix, Result, Vector};

/// Perceptual term added to the squared error with weight `omega`.
pub trait PerceptualLoss: Sync {
    /// Value and gradient with respect to `x`.
    fn value_grad(&self, x: &Vector, reference: &Vector) -> (f64, Vector);
}

/// Contributes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPerceptual;

impl PerceptualLoss for NoPerceptual {
    fn value_grad(&self, x: &Vector, _: &Vector) -> (f64, Vector) {
        (0.0, Vector::zeros(x.len()))
    }
}

/// Squared difference of first-order finite differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientDomain;

impl PerceptualLoss for GradientDomain {
    fn value_grad(&self, x: &Vector, reference: &Vector) -> (f64, Vector) {
        let n = x.len();
        let mut grad = Vector::zeros(n);
        let mut value = 0.0;
        for k in 0..n.saturating_sub(1) {
            let r = (x[k + 1] - x[k]) - (reference[k + 1] - reference[k]);
            value += r * r;
            grad[k + 1] += 2.0 * r;
            grad[k] -= 2.0 * r;
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginKind {
    None,
    #[default]
    #[serde(alias = "gradient-domain")]
    GradientDomain,
}

impl PluginKind {
    pub fn plugin(self) -> &'static dyn PerceptualLoss {
        match self {
            Self::None => &NoPerceptual,
            Self::GradientDomain => &GradientDomain,
        }
    }
}

/// `||x - x_gt||^2 + omega * plugin(x, x_gt)`.
pub fn loss(x: &Vector, x_gt: &Vector, omega: f64, plugin: &dyn PerceptualLoss) -> Result<f64> {
    Ok(loss_and_grad(x, x_gt, omega, plugin)?.0)
}

fn loss_and_grad(x: &Vector, x_gt: &Vector, omega: f64, plugin: &dyn PerceptualLoss) -> Result<(f64, Vector)> {
    if x.len() != x_gt.len() {
        return Err(Error::Dimension(format!(
            "estimate of length {} for target {}",
            x.len(),
            x_gt.len()
        )));
    }
    let r = x - x_gt;
    let mut value = r.norm_squared();
    let mut grad = r * 2.0;
    if omega != 0.0 {
        let (p, pg) = plugin.value_grad(x, x_gt);
        value += omega * p;
        grad.axpy(omega, &pg, 1.0);
    }
    Ok((value, grad))
}

/// Basis matrix `[b_0 .. b_{m-1}]` with `b = [history.., xhat]`. With an
/// operator the columns are the range parts followed by the null parts.
pub fn basis_matrix(history: &[Vector], xhat: &Vector, op: Option<&LinearOperator>) -> Result<Matrix> {
    let cols: Vec<&Vector> = history.iter().chain(std::iter::once(xhat)).collect();
    let d = xhat.len();
    if let Some(c) = cols.iter().find(|c| c.len() != d) {
        return Err(Error::Dimension(format!("basis of length {} for {d}", c.len())));
    }
    match op {
        None => Ok(Matrix::from_columns(
            &cols.iter().map(|c| (*c).clone()).collect::<Vec<_>>(),
        )),
        Some(a) => {
            let mut out = Vec::with_capacity(cols.len() * 2);
            for s in [Subspace::Range, Subspace::Null] {
                for c in &cols {
                    out.push(a.project(c, s)?);
                }
            }
            Ok(Matrix::from_columns(&out))
        }
    }
}

/// Mean loss over the batch of `x~ = B gamma`.
pub fn batch_loss(
    bases: &[Matrix],
    x_gts: &[Vector],
    gamma: &Vector,
    omega: f64,
    plugin: &dyn PerceptualLoss,
) -> Result<f64> {
    check_batch(bases, x_gts, gamma)?;
    let mut total = 0.0;
    for (b, g) in bases.iter().zip(x_gts) {
        total += loss(&(b * gamma), g, omega, plugin)?;
    }
    Ok(total / bases.len() as f64)
}

/// Mean loss and its exact gradient over `gamma`.
pub fn loss_grad_gamma(
    bases: &[Matrix],
    x_gts: &[Vector],
    gamma: &Vector,
    omega: f64,
    plugin: &dyn PerceptualLoss,
) -> Result<(f64, Vector)> {
    check_batch(bases, x_gts, gamma)?;
    let n = bases.len() as f64;
    let mut total = 0.0;
    let mut grad = Vector::zeros(gamma.len());
    for (b, g) in bases.iter().zip(x_gts) {
        let (v, gx) = loss_and_grad(&(b * gamma), g, omega, plugin)?;
        total += v;
        grad += b.tr_mul(&gx);
    }
    Ok((total / n, grad / n))
}

fn check_batch(bases: &[Matrix], x_gts: &[Vector], gamma: &Vector) -> Result<()> {
    if bases.is_empty() || bases.len() != x_gts.len() {
        return Err(Error::Dimension(format!(
            "{} basis sets for {} targets",
            bases.len(),
            x_gts.len()
        )));
    }
    for (b, g) in bases.iter().zip(x_gts) {
        if b.ncols() != gamma.len() || b.nrows() != g.len() {
            return Err(Error::Dimension(format!(
                "basis {}x{} with {} coefficients and target {}",
                b.nrows(),
                b.ncols(),
                gamma.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Minimizer of the batch squared error, from `(G + 1e-10 I) gamma = h`.
pub fn solve_ls_closed_form(bases: &[Matrix], x_gts: &[Vector]) -> Result<Vector> {
    let m = bases.first().map(|b| b.ncols()).unwrap_or(0);
    check_batch(bases, x_gts, &Vector::zeros(m))?;
    let mut gram = Matrix::identity(m, m) * 1e-10;
    let mut rhs = Vector::zeros(m);
    for (b, g) in bases.iter().zip(x_gts) {
        gram += b.tr_mul(b);
        rhs += b.tr_mul(g);
    }
    match gram.clone().cholesky() {
        Some(c) => Ok(c.solve(&rhs)),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("least-squares Gram matrix".into())),
    }
}
