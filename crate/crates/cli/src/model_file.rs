//! JSON model documents: matrices are nested arrays of rows.
//!
//! ```json
//! {"n": 2, "ell": 1, "r": 0, "T": 1,
//!  "phi": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
//!  "q":   [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
//!  "c":   [[[1, 0]], [[1, 0]]],
//!  "f":   [[[]], [[]]]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use singest::linalg::Matrix;
use singest::reduction::{ReducedModel, ReducedStep, StateSpaceModel};

use crate::error::{CliError, Result};

pub type Rows = Vec<Vec<f64>>;

/// On-disk form of a [`StateSpaceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub phi: Vec<Rows>,
    pub q: Vec<Rows>,
    pub c: Vec<Rows>,
    pub f: Vec<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// On-disk form of a [`ReducedModel`]; optional blocks are absent at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedFile {
    pub kind: String,
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub blocks: Vec<ReducedStepFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedStepFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi2: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lam1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lam2: Option<Rows>,
    pub gain: Rows,
    pub trans_noise: Rows,
    pub cons_noise: Rows,
    pub obs_c: Rows,
    pub obs_offset: Rows,
    pub obs_noise: Rows,
    pub recon_w: Rows,
    pub recon_offset: Rows,
    pub v_u: Rows,
    pub v_c: Rows,
}

pub const REDUCED_KIND: &str = "reduced";

/// Either kind of model document.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Full(StateSpaceModel<f64>),
    Reduced(ReducedModel<f64>),
}

pub fn to_rows(m: &Matrix<f64>) -> Rows {
    m.row_iter().map(|row| row.iter().copied().collect()).collect()
}

/// Builds a matrix of a known shape, naming the field on mismatch.
pub fn from_rows(rows: &Rows, shape: (usize, usize), field: &str) -> Result<Matrix<f64>> {
    if rows.len() != shape.0 {
        return Err(CliError::Parse(format!("{field}: {} rows, expected {}", rows.len(), shape.0)));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != shape.1) {
        return Err(CliError::Parse(format!("{field}: row {i} has {} entries, expected {}", row.len(), shape.1)));
    }
    Ok(Matrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn matrices(list: &[Rows], len: usize, shape: (usize, usize), field: &str) -> Result<Vec<Matrix<f64>>> {
    if list.len() != len {
        return Err(CliError::Parse(format!("{field}: {} matrices, expected T + 1 = {len}", list.len())));
    }
    list.iter().enumerate().map(|(t, rows)| from_rows(rows, shape, &format!("{field}[{t}]"))).collect()
}

impl ModelFile {
    pub fn from_model(model: &StateSpaceModel<f64>, seed: Option<u64>) -> Self {
        let rows = |v: &[Matrix<f64>]| v.iter().map(to_rows).collect();
        Self {
            n: model.n,
            ell: model.ell,
            r: model.r,
            steps: model.num_steps(),
            phi: rows(&model.phi),
            q: rows(&model.q),
            c: rows(&model.c),
            f: rows(&model.f),
            seed,
        }
    }

    pub fn to_model(&self) -> Result<StateSpaceModel<f64>> {
        let (n, m, r) = (self.n, self.ell + self.r, self.r);
        if self.ell + r > n {
            return Err(CliError::Parse(format!("ell + r = {} exceeds n = {n}", self.ell + r)));
        }
        let len = self.steps + 1;
        let model = StateSpaceModel {
            n,
            ell: self.ell,
            r,
            phi: matrices(&self.phi, len, (n, n), "phi")?,
            q: matrices(&self.q, len, (n, n), "q")?,
            c: matrices(&self.c, len, (m, n), "c")?,
            f: matrices(&self.f, len, (m, r), "f")?,
        };
        model.validate()?;
        Ok(model)
    }
}

impl ReducedFile {
    pub fn from_reduced(red: &ReducedModel<f64>) -> Self {
        let opt = |m: &Option<Matrix<f64>>| m.as_ref().map(to_rows);
        let blocks = red
            .steps
            .iter()
            .map(|s| ReducedStepFile {
                psi1: opt(&s.psi1),
                psi2: opt(&s.psi2),
                lam1: opt(&s.lam1),
                lam2: opt(&s.lam2),
                gain: to_rows(&s.gain),
                trans_noise: to_rows(&s.trans_noise),
                cons_noise: to_rows(&s.cons_noise),
                obs_c: to_rows(&s.obs_c),
                obs_offset: to_rows(&s.obs_offset),
                obs_noise: to_rows(&s.obs_noise),
                recon_w: to_rows(&s.recon_w),
                recon_offset: to_rows(&s.recon_offset),
                v_u: to_rows(&s.v_u),
                v_c: to_rows(&s.v_c),
            })
            .collect();
        Self { kind: REDUCED_KIND.into(), n: red.n, ell: red.ell, r: red.r, steps: red.num_steps(), blocks }
    }

    pub fn to_reduced(&self) -> Result<ReducedModel<f64>> {
        let (n, ell, r) = (self.n, self.ell, self.r);
        if ell + r > n {
            return Err(CliError::Parse(format!("ell + r = {} exceeds n = {n}", ell + r)));
        }
        if self.blocks.len() != self.steps + 1 {
            return Err(CliError::Parse(format!(
                "blocks: {} entries, expected T + 1 = {}",
                self.blocks.len(),
                self.steps + 1
            )));
        }
        let (d, m) = (n - ell, ell + r);
        let mut steps = Vec::with_capacity(self.blocks.len());
        for (t, b) in self.blocks.iter().enumerate() {
            let name = |field: &str| format!("blocks[{t}].{field}");
            let opt = |rows: &Option<Rows>, shape, field: &str| -> Result<Option<Matrix<f64>>> {
                match (rows, t) {
                    (Some(rows), 1..) => Ok(Some(from_rows(rows, shape, &name(field))?)),
                    (None, 0) => Ok(None),
                    (Some(_), 0) => Err(CliError::Parse(format!("{}: not allowed at t = 0", name(field)))),
                    (None, _) => Err(CliError::Parse(format!("{}: missing", name(field)))),
                }
            };
            steps.push(ReducedStep {
                psi1: opt(&b.psi1, (d, d), "psi1")?,
                psi2: opt(&b.psi2, (d, ell), "psi2")?,
                lam1: opt(&b.lam1, (ell, d), "lam1")?,
                lam2: opt(&b.lam2, (ell, ell), "lam2")?,
                gain: from_rows(&b.gain, (d, ell), &name("gain"))?,
                trans_noise: from_rows(&b.trans_noise, (d, d), &name("trans_noise"))?,
                cons_noise: from_rows(&b.cons_noise, (ell, ell), &name("cons_noise"))?,
                obs_c: from_rows(&b.obs_c, (r, d), &name("obs_c"))?,
                obs_offset: from_rows(&b.obs_offset, (r, ell), &name("obs_offset"))?,
                obs_noise: from_rows(&b.obs_noise, (r, r), &name("obs_noise"))?,
                recon_w: from_rows(&b.recon_w, (n, d), &name("recon_w"))?,
                recon_offset: from_rows(&b.recon_offset, (n, ell), &name("recon_offset"))?,
                v_u: from_rows(&b.v_u, (m, r), &name("v_u"))?,
                v_c: from_rows(&b.v_c, (m, ell), &name("v_c"))?,
            });
        }
        Ok(ReducedModel::from_steps(n, ell, r, steps)?)
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Parse(format!("{}: {e}", path.display()))
}

/// Parses a model or reduced-model document from text.
pub fn parse_model(text: &str, path: &Path) -> Result<LoadedModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let reduced = value.get("kind").and_then(|k| k.as_str()) == Some(REDUCED_KIND);
    let located = |e: CliError| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    };
    if reduced {
        let file: ReducedFile = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
        file.to_reduced().map(LoadedModel::Reduced).map_err(located)
    } else {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
        file.to_model().map(LoadedModel::Full).map_err(located)
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_model(&text, path)
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("matrices serialize");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use singest::reduction::reduce_model;
    use singest::simulate::random_model;

    const AXIS: &str = r#"{"n": 2, "ell": 1, "r": 0, "T": 1,
        "phi": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
        "q":   [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
        "c":   [[[1, 0]], [[1, 0]]],
        "f":   [[[]], [[]]]}"#;

    fn parse(text: &str) -> Result<LoadedModel> {
        parse_model(text, Path::new("model.json"))
    }

    #[test]
    fn parses_axis_aligned_model() {
        let LoadedModel::Full(model) = parse(AXIS).unwrap() else { panic!("expected a full model") };
        assert_eq!((model.n, model.ell, model.r, model.num_steps()), (2, 1, 0, 1));
        assert_eq!(model.f[0].shape(), (1, 0));
    }

    #[test]
    fn reports_the_offending_field() {
        let bad = AXIS.replace(r#""c":   [[[1, 0]], [[1, 0]]]"#, r#""c":   [[[1, 0]], [[1, 0, 0]]]"#);
        let err = parse(&bad).unwrap_err().to_string();
        assert!(err.contains("c[1]: row 0 has 3 entries, expected 2"), "{err}");
        let short = AXIS.replace(r#""T": 1"#, r#""T": 2"#);
        assert!(parse(&short).unwrap_err().to_string().contains("phi: 2 matrices, expected T + 1 = 3"));
        let syntax = parse("{\"n\": 2,\n \"ell\": }").unwrap_err().to_string();
        assert!(syntax.contains("line 2"), "{syntax}");
    }

    #[test]
    fn model_round_trip_is_exact() {
        let model = random_model(4, 1, 2, 3, 9);
        let text = serde_json::to_string(&ModelFile::from_model(&model, Some(9))).unwrap();
        assert_eq!(parse(&text).unwrap(), LoadedModel::Full(model));
    }

    #[test]
    fn reduced_round_trip_is_exact() {
        for (ell, r) in [(0, 2), (2, 0), (1, 1), (4, 0)] {
            let red = reduce_model(&random_model(4, ell, r, 2, 3)).unwrap();
            let text = serde_json::to_string(&ReducedFile::from_reduced(&red)).unwrap();
            assert_eq!(parse(&text).unwrap(), LoadedModel::Reduced(red));
        }
    }
}
