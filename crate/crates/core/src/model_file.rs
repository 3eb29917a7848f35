//! Shared text container for fitted models.
//!
//! ```text
//! #model <kind>
//! #shape r c
//! <r rows of c values>          primary matrix
//! #matrix <name>
//! #shape r c
//! <r rows of c values>
//! #param <name> <value>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::embeddings::fmt_f64;
use crate::error::{Error, Result};

/// Name under which the unnamed leading matrix is stored.
pub const PRIMARY: &str = "primary";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: String,
    pub matrices: Vec<(String, DMatrix<f64>)>,
    pub params: Vec<(String, String)>,
}

impl ModelFile {
    pub fn new(kind: impl Into<String>, primary: DMatrix<f64>) -> Self {
        Self {
            kind: kind.into(),
            matrices: vec![(PRIMARY.to_string(), primary)],
            params: Vec::new(),
        }
    }

    pub fn with_matrix(mut self, name: &str, m: DMatrix<f64>) -> Self {
        self.matrices.push((name.to_string(), m));
        self
    }

    pub fn with_vector(self, name: &str, v: &DVector<f64>) -> Self {
        self.with_matrix(name, DMatrix::from_row_slice(1, v.len(), v.as_slice()))
    }

    pub fn with_param(mut self, name: &str, value: impl ToString) -> Self {
        self.params.push((name.to_string(), value.to_string()));
        self
    }

    pub fn with_f64(self, name: &str, value: f64) -> Self {
        self.with_param(name, fmt_f64(value))
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if kinds.contains(&self.kind.as_str()) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "model kind '{}' where one of {kinds:?} was expected",
                self.kind
            )))
        }
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::invalid(format!("model '{}' lacks matrix '{name}'", self.kind)))
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.matrix(name)?;
        if m.nrows() != 1 {
            return Err(Error::invalid(format!("matrix '{name}' is not a row vector")));
        }
        Ok(DVector::from_iterator(m.ncols(), m.iter().copied()))
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn param_as<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let raw = self
            .param(name)
            .ok_or_else(|| Error::invalid(format!("model '{}' lacks param '{name}'", self.kind)))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("param '{name}' has invalid value '{raw}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#model {}\n", self.kind);
        for (name, m) in &self.matrices {
            if name != PRIMARY {
                let _ = writeln!(out, "#matrix {name}");
            }
            let _ = writeln!(out, "#shape {} {}", m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        for (name, value) in &self.params {
            let _ = writeln!(out, "#param {name} {value}");
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        let kind = lines
            .first()
            .and_then(|l| l.strip_prefix("#model "))
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .ok_or_else(|| err(1, "expected '#model <kind>'".into()))?;

        let mut file = ModelFile {
            kind,
            matrices: Vec::new(),
            params: Vec::new(),
        };
        let mut pending_name: Option<String> = None;
        let mut i = 1;
        while i < lines.len() {
            let line = lines[i];
            let lineno = i + 1;
            i += 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("#matrix ") {
                pending_name = Some(name.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("#param ") {
                let mut it = rest.splitn(2, ' ');
                match (it.next(), it.next()) {
                    (Some(n), Some(v)) if !n.is_empty() => {
                        file.params.push((n.to_string(), v.trim().to_string()))
                    }
                    _ => return Err(err(lineno, "expected '#param <name> <value>'".into())),
                }
            } else if let Some(rest) = line.strip_prefix("#shape ") {
                let dims: Vec<usize> = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(lineno, format!("invalid shape '{rest}'"))))
                    .collect::<Result<_>>()?;
                let [rows, cols] = dims[..] else {
                    return Err(err(lineno, "expected '#shape r c'".into()));
                };
                let name = match pending_name.take() {
                    Some(n) => n,
                    None if file.matrices.is_empty() => PRIMARY.to_string(),
                    None => return Err(err(lineno, "'#shape' without preceding '#matrix <name>'".into())),
                };
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let row_line = lines
                        .get(i)
                        .ok_or_else(|| err(i + 1, format!("matrix '{name}' truncated")))?;
                    let rowno = i + 1;
                    i += 1;
                    let vals: Vec<f64> = row_line
                        .split_whitespace()
                        .map(|t| match t.parse::<f64>() {
                            Ok(v) if v.is_finite() => Ok(v),
                            _ => Err(err(rowno, format!("invalid value '{t}'"))),
                        })
                        .collect::<Result<_>>()?;
                    if vals.len() != cols {
                        return Err(err(rowno, format!("expected {cols} values, found {}", vals.len())));
                    }
                    data.extend(vals);
                }
                file.matrices.push((name, DMatrix::from_row_slice(rows, cols, &data)));
            } else {
                return Err(err(lineno, format!("unexpected line '{line}'")));
            }
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
