//! TOML documents for plant models and synthesis results.
//!
//! Matrices are stored as flat row-major arrays next to a `[dims]` table.
//! Floats are written in shortest round-trip form, so a write followed by a
//! read reproduces every entry bit for bit.

use std::ops::Range;
use std::path::{Path, PathBuf};

use anisofilt::synthesis::Residuals;
use anisofilt::{EstimatorGains, Mat, PlantModel, ShapingParams, SynthesisSolution};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMatrices {
    #[serde(rename = "A")]
    pub a: Spanned<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Spanned<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Spanned<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Spanned<Vec<f64>>,
    #[serde(rename = "Phi")]
    pub phi: Spanned<Vec<f64>>,
    #[serde(rename = "Psi")]
    pub psi: Spanned<Vec<f64>>,
}

/// Plant model file: `[dims]` with `n, m, p, r` and `[matrices]` with
/// `A, B, C, D, Phi, Psi`, plus optional `name` and `description`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dims: Spanned<Dims>,
    pub matrices: ModelMatrices,
}

/// Where a document came from, for locating errors.
struct Source<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Source<'_> {
    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, col)
    }

    fn error(&self, span: Option<Range<usize>>, field: &str, message: String) -> CliError {
        let (line, column) = span.map_or((0, 0), |s| self.line_col(s.start));
        CliError::Parse {
            path: self.path.to_path_buf(),
            line,
            column,
            field: field.to_string(),
            message,
        }
    }

    fn toml_error(&self, e: toml::de::Error) -> CliError {
        let field = e
            .message()
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_default();
        self.error(e.span(), &field, e.message().trim().to_string())
    }

    fn matrix(&self, field: &str, values: &Spanned<Vec<f64>>, rows: usize, cols: usize) -> Result<Mat, CliError> {
        let data = values.get_ref();
        if data.len() != rows * cols {
            return Err(self.error(
                Some(values.span()),
                field,
                format!(
                    "expected {rows}x{cols} = {} values, found {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(self.error(
                Some(values.span()),
                field,
                format!("entry {i} is not a finite number"),
            ));
        }
        Ok(Mat::from_row_slice(rows, cols, data))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn row_major(x: &Mat) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

/// A parsed model together with its metadata.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: Option<String>,
    pub description: Option<String>,
    pub dims: Dims,
    pub plant: PlantModel,
}

impl Model {
    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let src = Source { path, text };
        let doc: ModelDocument = toml::from_str(text).map_err(|e| src.toml_error(e))?;
        let dims = *doc.dims.get_ref();
        for (label, v) in [("n", dims.n), ("m", dims.m), ("p", dims.p), ("r", dims.r)] {
            if v == 0 {
                return Err(src.error(
                    Some(doc.dims.span()),
                    &format!("dims.{label}"),
                    "dimensions must be positive integers".into(),
                ));
            }
        }
        let Dims { n, m, p, r } = dims;
        let mx = &doc.matrices;
        let plant = PlantModel::new(
            src.matrix("matrices.A", &mx.a, n, n)?,
            src.matrix("matrices.B", &mx.b, n, m)?,
            src.matrix("matrices.C", &mx.c, p, n)?,
            src.matrix("matrices.D", &mx.d, p, m)?,
            src.matrix("matrices.Phi", &mx.phi, r, n)?,
            src.matrix("matrices.Psi", &mx.psi, r, m)?,
        )
        .map_err(|e| src.error(None, "matrices", e.to_string()))?;
        Ok(Self {
            name: doc.name,
            description: doc.description,
            dims,
            plant,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(path, &read(path)?)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        let p = &self.plant;
        let spanned = |x: &Mat| Spanned::new(0..0, row_major(x));
        let doc = ModelDocument {
            name: self.name.clone(),
            description: self.description.clone(),
            dims: Spanned::new(0..0, self.dims),
            matrices: ModelMatrices {
                a: spanned(&p.a),
                b: spanned(&p.b),
                c: spanned(&p.c),
                d: spanned(&p.d),
                phi: spanned(&p.phi),
                psi: spanned(&p.psi),
            },
        };
        toml::to_string(&doc).expect("model documents always serialize")
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed model")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub target: f64,
    pub q: f64,
    pub achieved_anisotropy: f64,
    pub anisotropic_norm: f64,
    pub theta: f64,
    pub energy: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMatrices {
    #[serde(rename = "K")]
    pub k: Spanned<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Spanned<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Spanned<Vec<f64>>,
    #[serde(rename = "L")]
    pub l: Spanned<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Spanned<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Spanned<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    pub k: f64,
    pub m: f64,
    pub s: f64,
    pub l: f64,
    pub q_equation: f64,
    pub p_equation: f64,
    pub p_consistency: f64,
}

/// Synthesis result file: `[solution]` scalars, `[dims]`, `[matrices]`
/// with `K, M, S, L, P, Q`, and `[residuals]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDocument {
    pub solution: SolutionSummary,
    pub dims: Spanned<Dims>,
    pub matrices: SolutionMatrices,
    pub residuals: ResidualTable,
}

/// The parts of a stored solution needed downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSolution {
    pub summary: SolutionSummary,
    pub dims: Dims,
    pub gains: EstimatorGains,
    pub shaping: ShapingParams,
    pub p: Mat,
    pub q_matrix: Mat,
    pub residuals: ResidualTable,
}

impl StoredSolution {
    pub fn from_solution(model: &Model, sol: &SynthesisSolution) -> Self {
        let r: &Residuals = &sol.residuals;
        Self {
            summary: SolutionSummary {
                model: model.name.clone(),
                target: sol.target,
                q: sol.q,
                achieved_anisotropy: sol.achieved_anisotropy,
                anisotropic_norm: sol.anisotropic_norm,
                theta: sol.theta,
                energy: sol.energy,
                iterations: sol.iterations,
                note: sol.note.clone(),
            },
            dims: model.dims,
            gains: sol.gains.clone(),
            shaping: sol.shaping.clone(),
            p: sol.p.clone(),
            q_matrix: sol.q_matrix.clone(),
            residuals: ResidualTable {
                k: r.k,
                m: r.m,
                s: r.s,
                l: r.l,
                q_equation: r.q_equation,
                p_equation: r.p_equation,
                p_consistency: r.p_consistency,
            },
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let src = Source { path, text };
        let doc: SolutionDocument = toml::from_str(text).map_err(|e| src.toml_error(e))?;
        let dims = *doc.dims.get_ref();
        let Dims { n, m, p, r } = dims;
        let mx = &doc.matrices;
        Ok(Self {
            summary: doc.solution,
            dims,
            gains: EstimatorGains {
                k: src.matrix("matrices.K", &mx.k, n, p)?,
                m: src.matrix("matrices.M", &mx.m, r, p)?,
            },
            shaping: ShapingParams {
                s: src.matrix("matrices.S", &mx.s, m, m)?,
                l: src.matrix("matrices.L", &mx.l, m, n)?,
            },
            p: src.matrix("matrices.P", &mx.p, n, n)?,
            q_matrix: src.matrix("matrices.Q", &mx.q, n, n)?,
            residuals: doc.residuals,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(path, &read(path)?)
    }

    pub fn to_toml(&self) -> String {
        let spanned = |x: &Mat| Spanned::new(0..0, row_major(x));
        let doc = SolutionDocument {
            solution: self.summary.clone(),
            dims: Spanned::new(0..0, self.dims),
            matrices: SolutionMatrices {
                k: spanned(&self.gains.k),
                m: spanned(&self.gains.m),
                s: spanned(&self.shaping.s),
                l: spanned(&self.shaping.l),
                p: spanned(&self.p),
                q: spanned(&self.q_matrix),
            },
            residuals: self.residuals.clone(),
        };
        toml::to_string(&doc).expect("solution documents always serialize")
    }

    /// Checks that the stored matrices fit the model they are used with.
    pub fn check_against(&self, model: &Model, path: &Path) -> Result<(), CliError> {
        if self.dims != model.dims {
            return Err(CliError::Parse {
                path: PathBuf::from(path),
                line: 0,
                column: 0,
                field: "dims".into(),
                message: format!(
                    "solution dimensions {:?} do not match the model {:?}",
                    self.dims, model.dims
                ),
            });
        }
        Ok(())
    }
}
