//! Externally computed descriptor vectors, one `id,v1,...,vD` row per sample.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ExternalLld {
    path: PathBuf,
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl ExternalLld {
    /// Reads a comma-separated file. A first line starting with `id,` is
    /// treated as a header. With `expected_dim = None` the width of the first
    /// data row sets `D`.
    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text, expected_dim)
    }

    pub fn parse(path: &Path, text: &str, expected_dim: Option<usize>) -> Result<Self> {
        let mut dim = expected_dim;
        let mut rows = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("id,")) {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            let values = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("sample `{id}`: {e}"),
                })?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::Sample {
                    id,
                    msg: format!(
                        "external LLD row has {} values, expected {d} ({}:{})",
                        values.len(),
                        path.display(),
                        i + 1
                    ),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Sample {
                    id,
                    msg: "external LLD row contains a non-finite value".into(),
                });
            }
            if rows.insert(id.clone(), values).is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("duplicate sample id `{id}`"),
                });
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no rows".into(),
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            dim,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row for `id`; a missing row is an error, never imputed.
    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.rows.get(id).map(Vec::as_slice).ok_or_else(|| Error::Sample {
            id: id.to_string(),
            msg: format!("no row in external LLD file {}", self.path.display()),
        })
    }
}
