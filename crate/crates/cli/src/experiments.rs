//! Runtime and robustness experiments.

use std::time::Instant;

use singest::estimation::{filter, reconstruct_all, smooth};
use singest::linalg::{Matrix, Real, Vector};
use singest::reduction::{reduce_model, StateSpaceModel};
use singest::reference::{conventional_reduced_smoother, flop_ratio, initial_state_reference, unreduced_robust_filter, Solver, StateMoments};
use singest::simulate::{hilbert_model, random_model, simulate};

use crate::error::{CliError, Result};
use crate::table::{format_number, ResultTable};

/// Observation pattern `(ell, r)` as a fraction of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Config {
    /// `ell = n/2`, `r = 0`.
    HalfNone,
    /// `ell = n/4`, `r = 0`.
    QuarterNone,
    /// `ell = n/4`, `r = n/4`.
    QuarterQuarter,
    /// `ell = n/8`, `r = n/8`.
    EighthEighth,
}

impl Config {
    pub const ALL: [Config; 4] = [Config::HalfNone, Config::QuarterNone, Config::QuarterQuarter, Config::EighthEighth];

    pub fn label(self) -> &'static str {
        match self {
            Config::HalfNone => "n2-0",
            Config::QuarterNone => "n4-0",
            Config::QuarterQuarter => "n4-n4",
            Config::EighthEighth => "n8-n8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| CliError::Parse(format!("unknown config {s:?}, expected one of n2-0, n4-0, n4-n4, n8-n8")))
    }

    pub fn dims(self, n: usize) -> (usize, usize) {
        match self {
            Config::HalfNone => (n / 2, 0),
            Config::QuarterNone => (n / 4, 0),
            Config::QuarterQuarter => (n / 4, n / 4),
            Config::EighthEighth => (n / 8, n / 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeRow {
    pub n: usize,
    pub config: Config,
    pub ell: usize,
    pub r: usize,
    pub reduced_seconds: f64,
    pub unreduced_seconds: f64,
    pub ratio: f64,
    pub prediction: f64,
}

fn best_of<F: FnMut() -> Result<()>>(repeats: usize, mut run: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        run()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn time_filters<T: Real>(model: &StateSpaceModel<T>, seed: u64, repeats: usize) -> Result<(f64, f64)> {
    let red = reduce_model(model)?;
    let obs = simulate(model, seed, false).y;
    let reduced = best_of(repeats, || {
        std::hint::black_box(filter(&red, &obs, false)?);
        Ok(())
    })?;
    let unreduced = best_of(repeats, || {
        std::hint::black_box(unreduced_robust_filter(model, &obs, false)?);
        Ok(())
    })?;
    Ok((reduced, unreduced))
}

/// Times the reduced filter against the unreduced one on a random model
/// per `(n, config)`, best of `repeats` runs each. The reduction itself is
/// not timed.
pub fn bench_runtime(
    n_list: &[usize],
    configs: &[Config],
    steps: usize,
    repeats: usize,
    precision: Precision,
    seed: u64,
) -> Result<Vec<RuntimeRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        for &config in configs {
            let (ell, r) = config.dims(n);
            let model = random_model(n, ell, r, steps, seed);
            let (reduced_seconds, unreduced_seconds) = match precision {
                Precision::Single => time_filters(&model.cast::<f32>(), seed, repeats)?,
                Precision::Double => time_filters(&model, seed, repeats)?,
            };
            rows.push(RuntimeRow {
                n,
                config,
                ell,
                r,
                reduced_seconds,
                unreduced_seconds,
                ratio: reduced_seconds / unreduced_seconds,
                prediction: flop_ratio(n, ell, r),
            });
        }
    }
    Ok(rows)
}

pub fn runtime_table(rows: &[RuntimeRow]) -> ResultTable {
    let mut table =
        ResultTable::new(["n", "config", "ell", "r", "reduced_seconds", "unreduced_seconds", "ratio", "prediction"]);
    for row in rows {
        table.push(vec![
            row.n.to_string(),
            row.config.label().to_string(),
            row.ell.to_string(),
            row.r.to_string(),
            format_number(row.reduced_seconds),
            format_number(row.unreduced_seconds),
            format_number(row.ratio),
            format_number(row.prediction),
        ]);
    }
    table
}

/// log10 of the mean absolute error of the `x_0` mean, covariance and
/// both together. NaN if any estimate is NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorScores {
    pub mean: f64,
    pub cov: f64,
    pub combined: f64,
}

impl ErrorScores {
    pub fn compare(estimate_mean: &Vector<f64>, estimate_cov: &Matrix<f64>, reference: &StateMoments) -> Self {
        let mean_err: Vec<f64> = estimate_mean.iter().zip(reference.mean.iter()).map(|(a, b)| (a - b).abs()).collect();
        let cov_err: Vec<f64> = estimate_cov.iter().zip(reference.cov.iter()).map(|(a, b)| (a - b).abs()).collect();
        let log_mae = |errs: &[f64]| (errs.iter().sum::<f64>() / errs.len() as f64).log10();
        let all: Vec<f64> = mean_err.iter().chain(&cov_err).copied().collect();
        Self { mean: log_mae(&mean_err), cov: log_mae(&cov_err), combined: log_mae(&all) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HilbertRow {
    pub n: usize,
    pub ell: usize,
    pub ours: ErrorScores,
    pub lu: ErrorScores,
    pub cholesky: ErrorScores,
}

/// Random walk driven by the `n x n` Hilbert matrix with the first `n/2`
/// coordinates observed exactly. Each method's smoothed `x_0` moments are
/// scored against a 256-bit reference.
pub fn bench_hilbert(n_list: &[usize], steps: usize, seed: u64) -> Result<Vec<HilbertRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let ell = n / 2;
        let model = hilbert_model(n, ell, steps);
        let obs = simulate(&model, seed, false).y;
        let reference = initial_state_reference(&model, &obs)?;
        let red = reduce_model(&model)?;
        let out = filter(&red, &obs, true).and_then(smooth).and_then(|o| reconstruct_all(&red, o, &obs))?;
        let x0 = &out.reconstructed.as_ref().expect("reconstructed")[0];
        let ours = ErrorScores::compare(x0.mean(), &x0.covariance(), &reference);
        let conventional = |solver| -> Result<ErrorScores> {
            let conv = conventional_reduced_smoother(&red, &obs, solver)?;
            let x0 = &conv.reconstructed[0];
            Ok(ErrorScores::compare(&x0.mean, &x0.cov, &reference))
        };
        rows.push(HilbertRow { n, ell, ours, lu: conventional(Solver::Lu)?, cholesky: conventional(Solver::Cholesky)? });
    }
    Ok(rows)
}

pub fn hilbert_table(rows: &[HilbertRow]) -> ResultTable {
    let mut header = vec!["n".to_string(), "ell".to_string()];
    for method in ["ours", "lu", "cholesky"] {
        header.extend(["mean", "cov", "all"].map(|part| format!("{method}_{part}")));
    }
    let mut table = ResultTable::new(header);
    for row in rows {
        let mut cells = vec![row.n.to_string(), row.ell.to_string()];
        for s in [row.ours, row.lu, row.cholesky] {
            cells.extend([s.mean, s.cov, s.combined].map(format_number));
        }
        table.push(cells);
    }
    table
}
