//! Linear observation operators stored as a thin SVD `A = U diag(s) V^T`.
//!
//! Only strictly positive singular values are kept; the orthogonal complement
//! of `V` is the null space.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Mask,
    AvgPool,
    Blur,
    Hadamard,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Range,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    n: usize,
    m: usize,
    u: Matrix,
    s: Vector,
    v: Matrix,
    kind: OperatorKind,
}

impl LinearOperator {
    /// Assembles an operator from its spectral factors, checking shapes,
    /// positivity of `s` and orthonormality of `U` and `V`.
    pub fn from_parts(u: Matrix, s: Vector, v: Matrix, kind: OperatorKind) -> Result<Self> {
        let r = s.len();
        if u.ncols() != r || v.ncols() != r {
            return Err(Error::Dimension(format!(
                "U is {}x{}, V is {}x{}, but {r} singular values",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        if let Some(bad) = s.iter().find(|x| !(**x > 0.0)) {
            return Err(Error::OperatorSpec(format!(
                "singular values must be positive, got {bad}"
            )));
        }
        let eye = Matrix::identity(r, r);
        for (name, f) in [("U", &u), ("V", &v)] {
            let err = (f.transpose() * f - &eye).amax();
            if err > 1e-10 {
                return Err(Error::OperatorSpec(format!(
                    "{name} is not orthonormal (error {err:e})"
                )));
            }
        }
        Ok(Self {
            n: v.nrows(),
            m: u.nrows(),
            u,
            s,
            v,
            kind,
        })
    }

    /// Keeps the listed coordinates, in the order given.
    pub fn mask(n: usize, keep: &[usize]) -> Result<Self> {
        let mut seen = vec![false; n];
        for &k in keep {
            if k >= n {
                return Err(Error::OperatorSpec(format!("mask index {k} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::OperatorSpec(format!("mask index {k} repeated")));
            }
        }
        let m = keep.len();
        let mut v = Matrix::zeros(n, m);
        for (j, &k) in keep.iter().enumerate() {
            v[(k, j)] = 1.0;
        }
        Self::from_parts(Matrix::identity(m, m), Vector::repeat(m, 1.0), v, OperatorKind::Mask)
    }

    /// Random mask keeping `round(keep_ratio * n)` coordinates, sorted.
    pub fn random_mask(n: usize, keep_ratio: f64, stream: &mut RngStream) -> Result<Self> {
        let m = kept_count(n, keep_ratio)?;
        let mut keep: Vec<usize> = stream.permutation(n)[..m].to_vec();
        keep.sort_unstable();
        Self::mask(n, &keep)
    }

    /// Block averaging over consecutive groups of `factor` coordinates.
    pub fn avgpool(n: usize, factor: usize) -> Result<Self> {
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::OperatorSpec(format!(
                "average pooling factor {factor} does not divide n = {n}"
            )));
        }
        let m = n / factor;
        let f = factor as f64;
        let mut v = Matrix::zeros(n, m);
        for j in 0..m {
            for i in 0..factor {
                v[(j * factor + i, j)] = 1.0 / f.sqrt();
            }
        }
        Self::from_parts(
            Matrix::identity(m, m),
            Vector::repeat(m, 1.0 / f.sqrt()),
            v,
            OperatorKind::AvgPool,
        )
    }

    /// Circular convolution with a symmetric odd-length kernel, diagonalized
    /// in the real Fourier (cosine/sine) basis. Negative eigenvalues have
    /// their sign folded into `U`; eigenvalues below `1e-12 * max` are dropped.
    pub fn blur(n: usize, kernel: &[f64]) -> Result<Self> {
        validate_kernel(kernel)?;
        let c = circulant_column(n, kernel);
        let mut basis: Vec<(f64, Vector)> = Vec::with_capacity(n);
        let eig = |k: usize| -> f64 { (0..n).map(|j| c[j] * (TAU * (j * k) as f64 / n as f64).cos()).sum() };
        let cos_vec = |k: usize, scale: f64| Vector::from_fn(n, |j, _| scale * (TAU * (j * k) as f64 / n as f64).cos());
        let sin_vec = |k: usize, scale: f64| Vector::from_fn(n, |j, _| scale * (TAU * (j * k) as f64 / n as f64).sin());
        let edge = 1.0 / (n as f64).sqrt();
        let inner = (2.0 / n as f64).sqrt();
        basis.push((eig(0), cos_vec(0, edge)));
        for k in 1..n.div_ceil(2) {
            let lam = eig(k);
            basis.push((lam, cos_vec(k, inner)));
            basis.push((lam, sin_vec(k, inner)));
        }
        if n.is_multiple_of(2) {
            basis.push((eig(n / 2), cos_vec(n / 2, edge)));
        }
        let max = basis.iter().map(|(l, _)| l.abs()).fold(0.0, f64::max);
        let kept: Vec<&(f64, Vector)> = basis.iter().filter(|(l, _)| l.abs() > 1e-12 * max).collect();
        let r = kept.len();
        let mut u = Matrix::zeros(n, r);
        let mut v = Matrix::zeros(n, r);
        let mut s = Vector::zeros(r);
        for (j, (lam, vec)) in kept.iter().enumerate() {
            s[j] = lam.abs();
            v.set_column(j, vec);
            u.set_column(j, &(vec * lam.signum()));
        }
        Self::from_parts(u, s, v, OperatorKind::Blur)
    }

    /// Rows of the orthonormal Walsh–Hadamard matrix `H_n / sqrt(n)`.
    pub fn hadamard(n: usize, rows: &[usize]) -> Result<Self> {
        let h = walsh_hadamard(n)?;
        let m = rows.len();
        let mut v = Matrix::zeros(n, m);
        for (j, &row) in rows.iter().enumerate() {
            if row >= n {
                return Err(Error::OperatorSpec(format!("Hadamard row {row} out of range")));
            }
            for i in 0..n {
                v[(i, j)] = h[row][i] as f64 / (n as f64).sqrt();
            }
        }
        Self::from_parts(
            Matrix::identity(m, m),
            Vector::repeat(m, 1.0),
            v,
            OperatorKind::Hadamard,
        )
    }

    /// Randomly selected `round(keep_ratio * n)` Hadamard rows, sorted.
    pub fn random_hadamard(n: usize, keep_ratio: f64, stream: &mut RngStream) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::OperatorSpec(format!("Hadamard size {n} is not a power of two")));
        }
        let m = kept_count(n, keep_ratio)?;
        let mut rows: Vec<usize> = stream.permutation(n)[..m].to_vec();
        rows.sort_unstable();
        Self::hadamard(n, &rows)
    }

    /// Numeric thin SVD of an explicit matrix; singular values at or below
    /// `1e-12 * max(1, s_max)` are discarded.
    pub fn dense(a: &Matrix) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || n == 0 {
            return Err(Error::OperatorSpec("empty dense matrix".into()));
        }
        let svd = a.clone().svd(true, true);
        let u_all = svd.u.expect("requested U");
        let vt_all = svd.v_t.expect("requested V^T");
        let smax = svd.singular_values.max();
        let tol = 1e-12 * smax.max(1.0);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > tol)
            .collect();
        let u = Matrix::from_fn(m, keep.len(), |i, j| u_all[(i, keep[j])]);
        let v = Matrix::from_fn(n, keep.len(), |i, j| vt_all[(keep[j], i)]);
        let s = Vector::from_fn(keep.len(), |j, _| svd.singular_values[keep[j]]);
        Self::from_parts(u, s, v, OperatorKind::Dense)
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn singular_values(&self) -> &Vector {
        &self.s
    }

    fn check(&self, len: usize, expected: usize, what: &str) -> Result<()> {
        if len != expected {
            return Err(Error::Dimension(format!(
                "{what} has length {len}, expected {expected}"
            )));
        }
        Ok(())
    }

    /// `V^T x`, coordinates of `x` in the right singular basis.
    pub fn to_spectral(&self, x: &Vector) -> Result<Vector> {
        self.check(x.len(), self.n, "signal")?;
        Ok(self.v.tr_mul(x))
    }

    /// `U^T y`.
    pub fn obs_to_spectral(&self, y: &Vector) -> Result<Vector> {
        self.check(y.len(), self.m, "observation")?;
        Ok(self.u.tr_mul(y))
    }

    /// `V c` for spectral coordinates `c`.
    pub fn from_spectral(&self, c: &Vector) -> Vector {
        &self.v * c
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let c = self.to_spectral(x)?;
        Ok(&self.u * c.component_mul(&self.s))
    }

    pub fn apply_adjoint(&self, y: &Vector) -> Result<Vector> {
        let c = self.obs_to_spectral(y)?;
        Ok(&self.v * c.component_mul(&self.s))
    }

    /// Moore–Penrose pseudoinverse `V diag(1/s) U^T y`.
    pub fn pinv_apply(&self, y: &Vector) -> Result<Vector> {
        let c = self.obs_to_spectral(y)?;
        Ok(&self.v * c.component_div(&self.s))
    }

    /// Range projection `V V^T x` or its complement. The two parts sum to `x`.
    pub fn project(&self, x: &Vector, which: Subspace) -> Result<Vector> {
        let range = self.from_spectral(&self.to_spectral(x)?);
        Ok(match which {
            Subspace::Range => range,
            Subspace::Null => x - range,
        })
    }

    /// Both projections at once, `(range, null)`.
    pub fn split(&self, x: &Vector) -> Result<(Vector, Vector)> {
        let range = self.from_spectral(&self.to_spectral(x)?);
        let null = x - &range;
        Ok((range, null))
    }

    /// Dense `m x n` matrix.
    pub fn matrix(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.s) * self.v.transpose()
    }

    /// Dense `n x m` pseudoinverse.
    pub fn pinv_matrix(&self) -> Matrix {
        &self.v * Matrix::from_diagonal(&self.s.map(|x| 1.0 / x)) * self.u.transpose()
    }
}

fn kept_count(n: usize, keep_ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&keep_ratio) {
        return Err(Error::OperatorSpec(format!("keep ratio {keep_ratio} outside [0,1]")));
    }
    Ok((keep_ratio * n as f64).round() as usize)
}

pub(crate) fn validate_kernel(kernel: &[f64]) -> Result<()> {
    if kernel.len().is_multiple_of(2) {
        return Err(Error::OperatorSpec(format!(
            "kernel length {} is not odd",
            kernel.len()
        )));
    }
    let l = kernel.len();
    for i in 0..l / 2 {
        if (kernel[i] - kernel[l - 1 - i]).abs() > 1e-12 {
            return Err(Error::OperatorSpec("kernel is not symmetric".into()));
        }
    }
    let total: f64 = kernel.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::OperatorSpec(format!("kernel sums to {total}, not 1")));
    }
    Ok(())
}

/// First column of the circulant for a centered kernel wrapped onto `n` points.
pub(crate) fn circulant_column(n: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut c = vec![0.0; n];
    for (i, k) in kernel.iter().enumerate() {
        let offset = i as isize - half;
        c[offset.rem_euclid(n as isize) as usize] += k;
    }
    c
}

/// Normalized Gaussian kernel of length `2 * radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::OperatorSpec(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut k: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // Mirror so symmetry is exact in floating point.
    for i in 0..radius {
        k[2 * radius - i] = k[i];
    }
    Ok(k)
}

/// Sylvester-construction Walsh–Hadamard matrix with `+-1` integer entries.
pub fn walsh_hadamard(n: usize) -> Result<Vec<Vec<i64>>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::OperatorSpec(format!("Hadamard size {n} is not a power of two")));
    }
    let mut h = vec![vec![1i64]];
    while h.len() < n {
        let k = h.len();
        let mut next = vec![vec![0i64; 2 * k]; 2 * k];
        for i in 0..k {
            for j in 0..k {
                next[i][j] = h[i][j];
                next[i][j + k] = h[i][j];
                next[i + k][j] = h[i][j];
                next[i + k][j + k] = -h[i][j];
            }
        }
        h = next;
    }
    Ok(h)
}
