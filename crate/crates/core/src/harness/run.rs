use rayon::prelude::*;

use super::config::Experiment;
use super::eval::{evaluate, Evaluation};
use super::oracle::oracle_posterior;
use crate::canonical::Solver;
use crate::diffusion::{make_time_grid, NoisePredictor, TimeGrid};
use crate::lle::{generate_references, infer, train, LleCoefficients, TrainOutput, TrainingSet};
use crate::numerics::{purpose, RngStream};
use crate::operators::Observation;
use crate::{Error, Result, Vector};

impl Experiment {
    pub fn solver(&self) -> Result<Solver<'_>> {
        Solver::new(&self.model, self.params)
    }

    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        make_time_grid(self.model.schedule(), steps)
    }

    /// Held-out truths (prior draws on the test seed) and their
    /// observations.
    pub fn test_set(&self) -> Result<TrainingSet> {
        let seed = self.config.seeds.test;
        let truths = (0..self.config.n_test)
            .into_par_iter()
            .map(|n| {
                self.model
                    .prior()
                    .sample(&mut RngStream::for_sample(seed, purpose::TRUTH, n))
            })
            .collect();
        TrainingSet::observe(truths, &self.op, self.config.task.sigma_y, seed)
    }

    /// DDIM references on the train seed.
    pub fn references(&self) -> Result<Vec<Vector>> {
        let t = self.train_config();
        generate_references(&self.model, t.n_refs, t.ref_steps, t.base_seed)
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        TrainingSet::observe(
            self.references()?,
            &self.op,
            self.config.task.sigma_y,
            self.config.seeds.train,
        )
    }

    /// Trains coefficients for an `steps`-step grid; the training set can be
    /// shared across calls.
    pub fn train_on(&self, set: &TrainingSet, steps: usize) -> Result<TrainOutput> {
        train(&self.solver()?, set, &self.grid(steps)?, &self.train_config())
    }

    /// Coefficients for `steps`: trained when LLE is configured, identity
    /// otherwise. Also returns the training-set estimates.
    pub fn coefficients(&self, set: &TrainingSet, steps: usize) -> Result<(LleCoefficients, Vec<Vector>)> {
        if self.config.lle.is_some() {
            let out = self.train_on(set, steps)?;
            return Ok((out.coeffs, out.estimates));
        }
        let coeffs = LleCoefficients::identity(&self.grid(steps)?, false);
        let est = self.reconstruct(&set.observations, steps, Some(&coeffs), self.config.seeds.train)?;
        Ok((coeffs, est))
    }

    /// One solver run per observation; sample `n` uses trajectory stream `n`
    /// of `seed`.
    pub fn reconstruct(
        &self,
        observations: &[Observation],
        steps: usize,
        coeffs: Option<&LleCoefficients>,
        seed: u64,
    ) -> Result<Vec<Vector>> {
        let solver = self.solver()?;
        let grid = self.grid(steps)?;
        observations
            .par_iter()
            .enumerate()
            .map(|(n, obs)| {
                let mut s = RngStream::for_sample(seed, purpose::TRAJECTORY, n);
                match coeffs {
                    Some(c) => infer(&solver, obs, &grid, c, &mut s),
                    None => solver.run(obs, &grid, &mut s),
                }
            })
            .collect()
    }

    /// MMSE means of the exact posteriors, for linear operators. Noiseless
    /// tasks use the floored approximation.
    pub fn oracle_means(&self, observations: &[Observation]) -> Result<Option<Vec<Vector>>> {
        let Some(op) = self.op.as_linear() else {
            return Ok(None);
        };
        observations
            .par_iter()
            .map(|o| Ok(oracle_posterior(self.model.prior(), op, &o.y, o.sigma_y, true)?.mmse_mean()))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Metrics of `recon` against the held-out set, with the oracle column
    /// when available.
    pub fn evaluate_test(&self, recon: &[Vector], test: &TrainingSet) -> Result<Evaluation> {
        if recon.len() != test.len() {
            return Err(Error::Dimension(format!(
                "{} reconstructions for {} test samples",
                recon.len(),
                test.len()
            )));
        }
        let oracle = self.oracle_means(&test.observations)?;
        evaluate(recon, &test.truths, oracle.as_deref(), self.config.peak)
    }
}
