use std::path::Path;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;
use crate::{Error, Matrix, Result, Vector};

/// Mixture of full-covariance Gaussians, the data distribution `q(x_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    weights: Vec<f64>,
    means: Vec<Vector>,
    covariances: Vec<Matrix>,
}

/// On-disk form: covariances are flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, covariances: Vec<Matrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Prior("mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::Prior(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Prior(format!("weights must be positive, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Prior(format!("weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Prior("zero-dimensional prior".into()));
        }
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(Error::Prior(format!("component {i} has inconsistent dimensions")));
            }
            let asym = (c - c.transpose()).amax();
            if asym > 1e-10 * c.amax().max(1.0) {
                return Err(Error::Prior(format!("covariance {i} is not symmetric")));
            }
            if Cholesky::new(c.clone()).is_none() {
                return Err(Error::Prior(format!("covariance {i} is not positive definite")));
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    /// `N(0, I_d)` as a one-component mixture.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![Vector::zeros(dim)], vec![Matrix::identity(dim, dim)])
            .expect("standard normal is a valid prior")
    }

    /// Random well-conditioned mixture whose samples mostly fall in `[-1, 1]`.
    pub fn random(dim: usize, components: usize, seed: u64) -> Result<Self> {
        if dim == 0 || components == 0 {
            return Err(Error::Prior("dimension and component count must be positive".into()));
        }
        let mut stream = RngStream::new(seed, crate::numerics::stream_id(crate::numerics::purpose::PRIOR, 0));
        let raw: Vec<f64> = stream.uniform(components).iter().map(|u| 0.5 + u).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // Put the rounding residue on the last weight so the sum is 1 to the ulp.
        let head: f64 = weights[..components - 1].iter().sum();
        weights[components - 1] = 1.0 - head;

        let mut means = Vec::with_capacity(components);
        let mut covariances = Vec::with_capacity(components);
        for _ in 0..components {
            means.push(stream.standard_normal(dim) * 0.4);
            let b = Matrix::from_iterator(dim, dim, stream.standard_normal(dim * dim).iter().copied());
            let cov = (&b * b.transpose()) * (0.04 / dim as f64) + Matrix::identity(dim, dim) * 0.01;
            covariances.push((&cov + cov.transpose()) * 0.5);
        }
        Self::new(weights, means, covariances)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vector] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix] {
        &self.covariances
    }

    /// Exact i.i.d. draw from the mixture.
    pub fn sample(&self, stream: &mut RngStream) -> Vector {
        let u = stream.uniform(1)[0];
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let chol = Cholesky::new(self.covariances[k].clone()).expect("validated at construction");
        let z = stream.standard_normal(self.dim());
        &self.means[k] + chol.l() * z
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Vector {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(Vector::zeros(self.dim()), |acc, (w, m)| acc + m * *w)
    }

    pub fn to_file(&self) -> PriorFile {
        PriorFile {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| c.transpose().iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_file(file: &PriorFile) -> Result<Self> {
        let d = file.means.first().map(Vec::len).unwrap_or(0);
        let means = file.means.iter().map(|m| Vector::from_vec(m.clone())).collect();
        let covariances = file
            .covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.len() != d * d {
                    Err(Error::Prior(format!(
                        "covariance {i} has {} entries, expected {}",
                        c.len(),
                        d * d
                    )))
                } else {
                    Ok(Matrix::from_row_slice(d, d, c))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.weights.clone(), means, covariances)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
