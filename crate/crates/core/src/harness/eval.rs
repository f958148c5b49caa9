use std::fmt::Write as _;
use std::path::Path;

use crate::numerics::{mse, psnr_from_mse, MetricReport};
use crate::{Error, Result, Vector};

pub const EVAL_HEADER: &str = "sample,mse,psnr,oracle_mse";

/// Per-sample metrics of a reconstruction batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricReport>,
    pub peak: f64,
}

impl Evaluation {
    pub fn mean_mse(&self) -> f64 {
        self.rows.iter().map(|r| r.mse).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean of the per-sample PSNR values.
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr_db).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_oracle_mse(&self) -> Option<f64> {
        let s: Option<f64> = self.rows.iter().map(|r| r.oracle_mse).sum();
        s.map(|v| v / self.rows.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for (i, r) in self.rows.iter().enumerate() {
            let oracle = r.oracle_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(out, "{i},{:e},{:e},{oracle}", r.mse, r.psnr_db);
        }
        out
    }

    /// Parses [`Evaluation::to_csv`] output; PSNR is recomputed from the
    /// stored MSE with `peak`.
    pub fn from_csv(text: &str, peak: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(EVAL_HEADER) {
            return Err(Error::Config(format!("evaluation CSV must start with `{EVAL_HEADER}`")));
        }
        let num = |s: &str, line: usize| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("line {line}: `{s}` is not a number")))
        };
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 || f[0] != k.to_string() {
                return Err(Error::Config(format!("line {}: malformed row `{line}`", k + 2)));
            }
            let oracle = if f[3].is_empty() { None } else { Some(num(f[3], k + 2)?) };
            rows.push(MetricReport::new(num(f[1], k + 2)?, peak, oracle));
        }
        Ok(Self { rows, peak })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, peak: f64) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, peak)
    }
}

/// Metrics of `recon` against `truth`, with the squared distance to the
/// MMSE means per coordinate when `mmse` is given.
pub fn evaluate(recon: &[Vector], truth: &[Vector], mmse: Option<&[Vector]>, peak: f64) -> Result<Evaluation> {
    if recon.len() != truth.len() || mmse.is_some_and(|m| m.len() != recon.len()) {
        return Err(Error::Dimension(format!(
            "{} reconstructions against {} truths",
            recon.len(),
            truth.len()
        )));
    }
    if recon.is_empty() {
        return Err(Error::Dimension("empty evaluation batch".into()));
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Parameter(format!("peak = {peak} must be positive")));
    }
    let rows = recon
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (x, t))| {
            let oracle = mmse.map(|m| mse(x.as_slice(), m[i].as_slice())).transpose()?;
            let e = mse(x.as_slice(), t.as_slice())?;
            Ok(MetricReport {
                mse: e,
                psnr_db: psnr_from_mse(e, peak),
                oracle_mse: oracle,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { rows, peak })
}
