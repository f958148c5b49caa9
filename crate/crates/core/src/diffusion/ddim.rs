use super::schedule::{even_grid, TimeGrid};
use super::score::NoisePredictor;
use crate::numerics::RngStream;
use crate::{Error, Result, Vector};

/// Tweedie estimate of `x_0` given an already evaluated `eps`.
pub fn tweedie_from_eps(x: &Vector, eps: &Vector, alphabar: f64) -> Vector {
    if alphabar == 1.0 {
        return x.clone();
    }
    (x - eps * (1.0 - alphabar).sqrt()) / alphabar.sqrt()
}

/// `E[x_0 | x_t] = (x - sqrt(1 - ab) eps(x, t)) / sqrt(ab)`; identity at `t = 0`.
pub fn tweedie<M: NoisePredictor + ?Sized>(model: &M, x: &Vector, t: usize) -> Result<Vector> {
    let ab = model.alphabar(t)?;
    if t == 0 || ab == 1.0 {
        return Ok(x.clone());
    }
    Ok(tweedie_from_eps(x, &model.eps(x, t)?, ab))
}

/// DDIM noise and direction weights `(c1, c2)` for a step from `alphabar_from`
/// down to `alphabar_to`, with `c1^2 + c2^2 = 1 - alphabar_to`.
pub fn ddim_coefficients(alphabar_from: f64, alphabar_to: f64, eta: f64) -> Result<(f64, f64)> {
    let var_to = 1.0 - alphabar_to;
    let c1 = if eta == 0.0 || var_to == 0.0 || alphabar_from >= alphabar_to {
        0.0
    } else {
        let var_from = 1.0 - alphabar_from;
        eta * (1.0 - alphabar_from / alphabar_to).max(0.0).sqrt() * (var_to / var_from).sqrt()
    };
    let rad = var_to - c1 * c1;
    if rad < -1e-12 {
        return Err(Error::Numeric(format!(
            "DDIM c1^2 = {} exceeds 1 - alphabar = {var_to}",
            c1 * c1
        )));
    }
    Ok((c1, rad.max(0.0).sqrt()))
}

/// One DDIM step from `t_from` to `t_to`. When the noise weight is nonzero,
/// `noise` is used if given, otherwise drawn from `stream`.
pub fn ddim_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &Vector,
    t_from: usize,
    t_to: usize,
    eta: f64,
    noise: Option<&Vector>,
    stream: &mut RngStream,
) -> Result<Vector> {
    if t_from == t_to {
        return Ok(x.clone());
    }
    if t_from < t_to {
        return Err(Error::Parameter(format!(
            "DDIM step must go down in time: {t_from} -> {t_to}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta must be in [0,1], got {eta}")));
    }
    let ab_from = model.alphabar(t_from)?;
    let ab_to = model.alphabar(t_to)?;
    let eps = model.eps(x, t_from)?;
    ddim_step_with_eps(x, &eps, ab_from, ab_to, eta, noise, stream)
}

/// [`ddim_step`] with `eps(x, t_from)` already evaluated.
pub fn ddim_step_with_eps(
    x: &Vector,
    eps: &Vector,
    ab_from: f64,
    ab_to: f64,
    eta: f64,
    noise: Option<&Vector>,
    stream: &mut RngStream,
) -> Result<Vector> {
    let x0 = tweedie_from_eps(x, eps, ab_from);
    let (c1, c2) = ddim_coefficients(ab_from, ab_to, eta)?;
    let mut out = x0 * ab_to.sqrt() + eps * c2;
    if c1 != 0.0 {
        match noise {
            Some(n) => out += n * c1,
            None => out += stream.standard_normal(x.len()) * c1,
        }
    }
    Ok(out)
}

/// `k_steps` DDIM steps along an even sub-grid from `t_start` to 0.
pub fn ddim_run<M: NoisePredictor + ?Sized>(
    model: &M,
    x: &Vector,
    t_start: usize,
    k_steps: usize,
    eta: f64,
    stream: &mut RngStream,
) -> Result<Vector> {
    if k_steps == 0 {
        return Err(Error::Parameter("ddim_run needs at least one step".into()));
    }
    if t_start == 0 {
        return Ok(x.clone());
    }
    // Shorter runs when t_start < k_steps: the sub-grid cannot hold more
    // distinct points than t_start + 1.
    let grid = even_grid(t_start, k_steps.min(t_start))?;
    let mut cur = x.clone();
    for (_, from, to) in grid.steps_desc() {
        cur = ddim_step(model, &cur, from, to, eta, None, stream)?;
    }
    Ok(cur)
}

/// Unconditional sample: `x_T ~ N(0, I)` then DDIM down `grid`.
pub fn ddim_sample<M: NoisePredictor + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    eta: f64,
    stream: &mut RngStream,
) -> Result<Vector> {
    let mut x = stream.standard_normal(model.dim());
    for (_, from, to) in grid.steps_desc() {
        x = ddim_step(model, &x, from, to, eta, None, stream)?;
    }
    Ok(x)
}
