//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use singest::estimation::{filter, reconstruct_all, smooth, EstimationOutput};
use singest::linalg::Vector;
use singest::reduction::{reduce_model, ReducedModel};
use singest::reference::unreduced_robust_filter;
use singest::simulate::simulate;

use crate::error::{exit, CliError, Result};
use crate::experiments::{bench_hilbert, bench_runtime, hilbert_table, runtime_table, Config, Precision};
use crate::model_file::{load_model, LoadedModel, ReducedFile};
use crate::table::{estimation_table, observations_from_table, trajectory_table, ResultTable};

#[derive(Debug, Parser)]
#[command(name = "singest", version, about = "Filtering and smoothing for state-space models with noise-free observations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Filter,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce a model file ahead of any observations.
    Reduce {
        model: PathBuf,
        /// Output path for the reduced model (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter or smooth a sequence of observations.
    Estimate {
        /// Model or reduced-model file.
        model: PathBuf,
        /// Observation CSV with columns y_0..; simulated from --seed if absent.
        #[arg(long)]
        obs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "filter")]
        mode: Mode,
        /// Add per-step log-likelihood columns and a total row.
        #[arg(long)]
        loglik: bool,
        /// Report full-state moments instead of the reduced state.
        #[arg(long)]
        reconstruct: bool,
        /// Run the square-root filter on the unreduced model instead.
        #[arg(long, conflicts_with = "reconstruct")]
        unreduced: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a state and observation trajectory.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop all process and observation noise.
        #[arg(long)]
        zero_noise: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the reduced against the unreduced filter on random models.
    BenchRuntime {
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 300])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = ["n2-0".to_string(), "n4-0".into(), "n4-n4".into(), "n8-n8".into()])]
        config: Vec<String>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, value_enum, default_value = "single")]
        precision: PrecisionArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of the smoothed initial state on Hilbert-matrix models.
    BenchHilbert {
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 6, 7, 8, 9, 10, 11])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit_table(table: &ResultTable, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => table.write_path(path),
        None => table.write_to(stdout),
    }
}

fn load_observations(path: &Path, obs_dim: usize) -> Result<Vec<Vector<f64>>> {
    let table = ResultTable::read_path(path)?;
    observations_from_table(&table, obs_dim).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn reduced_estimate(red: &ReducedModel<f64>, obs: &[Vector<f64>], mode: Mode, reconstruct: bool) -> Result<EstimationOutput<f64>> {
    let mut out = filter(red, obs, mode == Mode::Smooth)?;
    if mode == Mode::Smooth {
        out = smooth(out)?;
    }
    if reconstruct {
        out = reconstruct_all(red, out, obs)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    model: &Path,
    obs: Option<&Path>,
    mode: Mode,
    loglik: bool,
    reconstruct: bool,
    unreduced: bool,
    seed: u64,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let loaded = load_model(model)?;
    let (full, red) = match loaded {
        LoadedModel::Full(m) => (Some(m), None),
        LoadedModel::Reduced(r) => (None, Some(r)),
    };
    let obs_dim = full.as_ref().map_or_else(|| red.as_ref().expect("one of the two").obs_dim(), |m| m.obs_dim());
    let y = match (obs, &full) {
        (Some(path), _) => load_observations(path, obs_dim)?,
        (None, Some(m)) => simulate(m, seed, false).y,
        (None, None) => return Err(CliError::Parse("a reduced model needs --obs".into())),
    };
    let result = if unreduced {
        let m = full.as_ref().ok_or_else(|| CliError::Parse("--unreduced needs a full model file".into()))?;
        let mut result = unreduced_robust_filter(m, &y, mode == Mode::Smooth)?;
        if mode == Mode::Smooth {
            result = smooth(result)?;
        }
        result
    } else {
        let red = match red {
            Some(r) => r,
            None => reduce_model(full.as_ref().expect("full model"))?,
        };
        reduced_estimate(&red, &y, mode, reconstruct)?
    };
    let marginals = match &result.reconstructed {
        Some(x) => x.as_slice(),
        None => result.best_marginals(),
    };
    emit_table(&estimation_table(marginals, &result, loglik), out, stdout)
}

fn full_model(path: &Path) -> Result<singest::reduction::StateSpaceModel<f64>> {
    match load_model(path)? {
        LoadedModel::Full(m) => Ok(m),
        LoadedModel::Reduced(_) => Err(CliError::Parse(format!("{}: expected a full model, found a reduced one", path.display()))),
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Reduce { model, out } => {
            let red = reduce_model(&full_model(&model)?)?;
            let file = ReducedFile::from_reduced(&red);
            match out {
                Some(path) => crate::model_file::write_json(&file, &path),
                None => {
                    let text = serde_json::to_string_pretty(&file).expect("matrices serialize");
                    writeln!(stdout, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
                }
            }
        }
        Command::Estimate { model, obs, mode, loglik, reconstruct, unreduced, seed, out } => cmd_estimate(
            &model,
            obs.as_deref(),
            mode,
            loglik,
            reconstruct,
            unreduced,
            seed,
            out.as_deref(),
            stdout,
        ),
        Command::Simulate { model, seed, zero_noise, out } => {
            let traj = simulate(&full_model(&model)?, seed, zero_noise);
            emit_table(&trajectory_table(&traj), out.as_deref(), stdout)
        }
        Command::BenchRuntime { n, config, steps, repeats, precision, seed, out } => {
            let configs = config.iter().map(|c| Config::parse(c)).collect::<Result<Vec<_>>>()?;
            let precision = match precision {
                PrecisionArg::Single => Precision::Single,
                PrecisionArg::Double => Precision::Double,
            };
            let rows = bench_runtime(&n, &configs, steps, repeats, precision, seed)?;
            emit_table(&runtime_table(&rows), out.as_deref(), stdout)
        }
        Command::BenchHilbert { n, steps, seed, out } => {
            if let Some(&bad) = n.iter().find(|&&k| k < 2) {
                return Err(CliError::Parse(format!("--n {bad}: Hilbert models need n >= 2")));
            }
            let rows = bench_hilbert(&n, steps, seed)?;
            emit_table(&hilbert_table(&rows), out.as_deref(), stdout)
        }
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::PARSE } else { exit::SUCCESS };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{rendered}") } else { write!(stdout, "{rendered}") };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
