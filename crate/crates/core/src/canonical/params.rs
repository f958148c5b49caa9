use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddrm,
    Ddnm,
    Dps,
    #[serde(alias = "pgdm", alias = "pi_gdm")]
    Pigdm,
    #[serde(alias = "red_diff", alias = "red-diff")]
    Reddiff,
    Diffpir,
    Dmps,
    Resample,
    Daps,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Ddrm,
        Algorithm::Ddnm,
        Algorithm::Dps,
        Algorithm::Pigdm,
        Algorithm::Reddiff,
        Algorithm::Diffpir,
        Algorithm::Dmps,
        Algorithm::Resample,
        Algorithm::Daps,
    ];

    /// Algorithms whose correctors are defined only for linear operators.
    pub fn requires_linear(self) -> bool {
        matches!(
            self,
            Algorithm::Ddrm | Algorithm::Ddnm | Algorithm::Pigdm | Algorithm::Dmps
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ddrm => "ddrm",
            Algorithm::Ddnm => "ddnm",
            Algorithm::Dps => "dps",
            Algorithm::Pigdm => "pigdm",
            Algorithm::Reddiff => "reddiff",
            Algorithm::Diffpir => "diffpir",
            Algorithm::Dmps => "dmps",
            Algorithm::Resample => "resample",
            Algorithm::Daps => "daps",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Langevin corrector and sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DapsParams {
    pub k_ddim: usize,
    pub n_langevin: usize,
    pub eta0: f64,
    pub delta: f64,
    pub sigma_langevin: f64,
    /// Use the `A^T (A x - y)` data step. `None` selects it automatically
    /// for linear operators with `sigma_y = 0`.
    pub noiseless_linear: Option<bool>,
}

impl Default for DapsParams {
    fn default() -> Self {
        Self {
            k_ddim: 5,
            n_langevin: 100,
            eta0: 1e-4,
            delta: 0.01,
            sigma_langevin: 0.02,
            noiseless_linear: None,
        }
    }
}

/// Inner optimizer for the proximal and hard-consistency correctors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOpt {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub eta_b: f64,
    pub zeta: f64,
    pub xi: f64,
    pub lambda: f64,
    pub gamma_rs: f64,
    pub daps: DapsParams,
    pub inner_opt: InnerOpt,
    /// ReSample: replace the inner optimizer by the least-norm projection.
    pub exact_hc: bool,
}

impl AlgoParams {
    /// Defaults per algorithm; task-dependent weights use the inpainting values.
    pub fn defaults(algorithm: Algorithm) -> Self {
        let (eta, lambda, inner_opt) = match algorithm {
            Algorithm::Ddrm | Algorithm::Ddnm => (
                0.85,
                0.0,
                InnerOpt {
                    lr: 0.0,
                    momentum: 0.0,
                    steps: 0,
                },
            ),
            Algorithm::Dmps => (
                0.85,
                1.0,
                InnerOpt {
                    lr: 0.0,
                    momentum: 0.0,
                    steps: 0,
                },
            ),
            Algorithm::Reddiff => (
                1.0,
                0.5,
                InnerOpt {
                    lr: 0.0,
                    momentum: 0.0,
                    steps: 0,
                },
            ),
            Algorithm::Diffpir => (
                1.0,
                7.0,
                InnerOpt {
                    lr: 0.1,
                    momentum: 0.9,
                    steps: 50,
                },
            ),
            Algorithm::Resample => (
                1.0,
                0.0,
                InnerOpt {
                    lr: 0.01,
                    momentum: 0.9,
                    steps: 50,
                },
            ),
            _ => (
                1.0,
                0.0,
                InnerOpt {
                    lr: 0.0,
                    momentum: 0.0,
                    steps: 0,
                },
            ),
        };
        Self {
            algorithm,
            eta,
            eta_b: 1.0,
            zeta: 1.0,
            xi: 1.0,
            lambda,
            gamma_rs: 100.0,
            daps: DapsParams::default(),
            inner_opt,
            exact_hc: false,
        }
    }

    /// Applies the fields present in `overrides`.
    pub fn with_overrides(mut self, o: &ParamOverrides) -> Result<Self> {
        macro_rules! set {
            ($($field:ident).+ <- $src:ident) => {
                if let Some(v) = o.$src {
                    self.$($field).+ = v;
                }
            };
        }
        set!(eta <- eta);
        set!(eta_b <- eta_b);
        set!(zeta <- zeta);
        set!(xi <- xi);
        set!(lambda <- lambda);
        set!(gamma_rs <- gamma_rs);
        set!(daps.k_ddim <- k_ddim);
        set!(daps.n_langevin <- n_langevin);
        set!(daps.eta0 <- eta0);
        set!(daps.delta <- delta);
        set!(daps.sigma_langevin <- sigma_langevin);
        set!(inner_opt.lr <- inner_lr);
        set!(inner_opt.momentum <- inner_momentum);
        set!(inner_opt.steps <- inner_steps);
        set!(exact_hc <- exact_hc);
        if o.noiseless_linear.is_some() {
            self.daps.noiseless_linear = o.noiseless_linear;
        }
        self.validate()?;
        Ok(self)
    }

    /// Checks the fields the tagged algorithm consults.
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::Parameter(format!(
                "{name} = {v} out of range for {}",
                self.algorithm
            )))
        };
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        use Algorithm::*;
        if matches!(self.algorithm, Ddrm | Ddnm | Dps | Pigdm | Diffpir | Dmps | Resample) && !unit(self.eta) {
            return bad("eta", self.eta);
        }
        match self.algorithm {
            Ddrm if !nonneg(self.eta_b) => bad("eta_b", self.eta_b),
            Dps if !nonneg(self.zeta) => bad("zeta", self.zeta),
            Reddiff if !nonneg(self.xi) => bad("xi", self.xi),
            Reddiff | Diffpir | Dmps if !nonneg(self.lambda) => bad("lambda", self.lambda),
            Resample if !nonneg(self.gamma_rs) => bad("gamma_rs", self.gamma_rs),
            Diffpir | Resample if !(nonneg(self.inner_opt.lr) && nonneg(self.inner_opt.momentum)) => {
                bad("inner_opt.lr", self.inner_opt.lr)
            }
            Daps => {
                let d = &self.daps;
                if d.k_ddim == 0 {
                    return Err(Error::Parameter("daps.k_ddim must be at least 1".into()));
                }
                if !(d.eta0.is_finite() && d.eta0 > 0.0) {
                    return bad("daps.eta0", d.eta0);
                }
                if !unit(d.delta) {
                    return bad("daps.delta", d.delta);
                }
                if !nonneg(d.sigma_langevin) {
                    return bad("daps.sigma_langevin", d.sigma_langevin);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Optional per-field overrides as written in experiment configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_rs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_ddim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_langevin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_langevin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noiseless_linear: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_hc: Option<bool>,
}
