//! `lle` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lle_core::diffusion::GaussianMixturePrior;
use lle_core::harness::{sweep, with_thread_limit, Experiment};
use lle_core::lle::{write_loss_trace, LleCoefficients, TrainingSet};
use lle_core::numerics::{load_array, save_array};
use lle_core::{Error, Result, Vector};

#[derive(Parser)]
#[command(
    name = "lle",
    version,
    about = "Diffusion inverse solvers with learnable linear extrapolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random Gaussian-mixture prior as JSON.
    GenPrior {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        components: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the DDIM reference samples used for training (N x d array).
    GenRefs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train LLE coefficients for the configured grid.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Reconstruct the held-out set (n_test x d array).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// LLE coefficients; the base solver runs without them.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out ground truths.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Per-sample metrics of a reconstruction against ground truths.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Base and LLE metrics for each step count.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn save_batch(path: &Path, batch: &[Vector]) -> Result<()> {
    let cols = batch.first().map_or(0, |v| v.len());
    let data: Vec<f64> = batch.iter().flat_map(|v| v.iter().copied()).collect();
    save_array(path, batch.len(), cols, &data)
}

fn load_batch(path: &Path, dim: usize) -> Result<Vec<Vector>> {
    let a = load_array(path)?;
    if a.cols != dim {
        return Err(Error::Dimension(format!(
            "{} has {} columns, the prior has dimension {dim}",
            path.display(),
            a.cols
        )));
    }
    Ok((0..a.rows).map(|i| Vector::from_row_slice(a.row(i))).collect())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenPrior {
            dim,
            components,
            seed,
            out,
        } => GaussianMixturePrior::random(dim, components, seed)?.save(out),
        Command::GenRefs { config, out } => {
            let exp = Experiment::load(config)?;
            save_batch(&out, &exp.references()?)
        }
        Command::Train { config, out, trace } => {
            let exp = Experiment::load(config)?;
            if exp.config.lle.is_none() {
                return Err(Error::Config("config has no lle section to train".into()));
            }
            let set = exp.training_set()?;
            let result = exp.train_on(&set, exp.config.steps)?;
            result.coeffs.save(out)?;
            if let Some(p) = trace {
                write_loss_trace(&result.reports, p)?;
            }
            for r in &result.reports {
                eprintln!("t={:4} loss {:.6e} -> {:.6e}", r.timestep, r.init_loss, r.final_loss);
            }
            Ok(())
        }
        Command::Run {
            config,
            coeffs,
            seed,
            out,
            truth_out,
        } => {
            let exp = Experiment::load(config)?;
            let coeffs = coeffs.map(LleCoefficients::load).transpose()?;
            let test = exp.test_set()?;
            let recon = exp.reconstruct(&test.observations, exp.config.steps, coeffs.as_ref(), seed)?;
            save_batch(&out, &recon)?;
            if let Some(p) = truth_out {
                save_batch(&p, &test.truths)?;
            }
            Ok(())
        }
        Command::Eval {
            recon,
            truth,
            config,
            out,
        } => {
            let exp = Experiment::load(config)?;
            let recon = load_batch(&recon, exp.dim())?;
            let truths = load_batch(&truth, exp.dim())?;
            let set = TrainingSet::observe(truths, &exp.op, exp.config.task.sigma_y, exp.config.seeds.test)?;
            let eval = exp.evaluate_test(&recon, &set)?;
            eval.save(out)?;
            eprintln!("mean mse {:.6e}, mean psnr {:.3} dB", eval.mean_mse(), eval.mean_psnr());
            if let Some(o) = eval.mean_oracle_mse() {
                eprintln!("mean oracle mse {o:.6e}");
            }
            Ok(())
        }
        Command::Sweep { config, steps, out } => {
            let exp = Experiment::load(config)?;
            let table = sweep(&exp, &steps)?;
            std::fs::write(out, table.to_csv())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_thread_limit(|| execute(cli.command)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
