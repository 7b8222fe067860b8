//! CSV tables for trajectories, observations and results.
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! finite `f64` exactly; NaN is written as `NaN`.

use std::io::{Read, Write};
use std::path::Path;

use singest::estimation::EstimationOutput;
use singest::gaussian::CholGaussian;
use singest::linalg::Vector;
use singest::simulate::Trajectory;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_number(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| CliError::Parse(format!("not a number: {s:?}")))
}

impl ResultTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parsed numeric value of a cell; empty cells are `None`.
    pub fn number(&self, row: usize, name: &str) -> Result<Option<f64>> {
        let col = self.column(name).ok_or_else(|| CliError::Parse(format!("no column {name:?}")))?;
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            Ok(None)
        } else {
            parse_number(cell).map(Some)
        }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| CliError::Parse(format!("writing CSV: {e}"));
        w.write_record(&self.header).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row).map_err(fail)?;
        }
        w.flush().map_err(|e| CliError::Parse(format!("writing CSV: {e}")))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let fail = |e: csv::Error| CliError::Parse(format!("reading CSV: {e}"));
        let header = r.headers().map_err(fail)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(fail))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read_from(file).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Columns `t, x_0.., y_0..`.
pub fn trajectory_table(traj: &Trajectory<f64>) -> ResultTable {
    let n = traj.x.first().map_or(0, |x| x.len());
    let m = traj.y.first().map_or(0, |y| y.len());
    let header = std::iter::once("t".to_string())
        .chain((0..n).map(|i| format!("x_{i}")))
        .chain((0..m).map(|j| format!("y_{j}")));
    let mut table = ResultTable::new(header);
    for (t, (x, y)) in traj.x.iter().zip(&traj.y).enumerate() {
        let row = std::iter::once(t.to_string()).chain(x.iter().chain(y.iter()).map(|&v| format_number(v)));
        table.push(row.collect());
    }
    table
}

/// Reads the `y_0..y_{m-1}` columns, one observation per row; other
/// columns are ignored.
pub fn observations_from_table(table: &ResultTable, obs_dim: usize) -> Result<Vec<Vector<f64>>> {
    let cols = (0..obs_dim)
        .map(|j| table.column(&format!("y_{j}")).ok_or_else(|| CliError::Parse(format!("missing column y_{j}"))))
        .collect::<Result<Vec<_>>>()?;
    let extra = table.header.iter().filter(|h| h.starts_with("y_")).count();
    if extra != obs_dim {
        return Err(CliError::Parse(format!("{extra} y_ columns, the model observes {obs_dim} values per step")));
    }
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let values = cols
                .iter()
                .map(|&c| parse_number(&row[c]).map_err(|e| CliError::Parse(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Vector::from_vec(values))
        })
        .collect()
}

/// One row per time step: `t`, the means, the lower triangle of the
/// (zero-padded, square) covariance factor and, with `loglik`, the
/// increments plus a `total` trailer row.
pub fn estimation_table(marginals: &[CholGaussian<f64>], out: &EstimationOutput<f64>, loglik: bool) -> ResultTable {
    let k = marginals.first().map_or(0, |m| m.dim());
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("mean_{i}")));
    for i in 0..k {
        header.extend((0..=i).map(|j| format!("chol_{i}_{j}")));
    }
    if loglik {
        header.extend(["loglik_c", "loglik_u", "loglik_cum"].map(String::from));
    }
    let mut table = ResultTable::new(header);
    let mut cum = 0.0;
    for (t, m) in marginals.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(m.mean().iter().map(|&v| format_number(v)));
        let l = m.cov_factor();
        for i in 0..k {
            row.extend((0..=i).map(|j| format_number(if j < l.ncols() { l[(i, j)] } else { 0.0 })));
        }
        if loglik {
            let inc = out.loglik_increments[t];
            cum += inc.constrained;
            cum += inc.unconstrained;
            row.extend([inc.constrained, inc.unconstrained, cum].map(format_number));
        }
        table.push(row);
    }
    if loglik {
        let mut row = vec![String::new(); table.header.len()];
        row[0] = "total".into();
        *row.last_mut().expect("loglik columns") = format_number(out.total_loglik());
        table.push(row);
    }
    table
}
