//! Word vectors and the lift of review documents onto the hyperboloid.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rand_distr::{Distribution, Normal};

use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::geometry::{exp_origin_space, log_origin_space, LorentzVec};

/// Default word vector width.
pub const DEFAULT_DIM: usize = 100;

/// Default number of tokens per document.
pub const DEFAULT_DOC_CAP: usize = 256;

/// Norm that out-of-ball Poincaré rows are pulled back to.
pub const BALL_CLAMP: f64 = 0.999;

/// Standard deviation of synthetic word vectors.
pub const SYNTHETIC_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingGeometry {
    Euclidean,
    Poincare,
}

/// Frozen word vectors. Row 0 is the all-zero row used for padding and
/// unknown tokens; real tokens start at row 1.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
    geometry: EmbeddingGeometry,
    /// Poincaré rows that had to be pulled back inside the ball.
    pub rescaled: usize,
    /// `log_o(exp_o(row))` per row, filled on first use.
    tangent: OnceLock<Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table from `(token, row)` pairs; duplicate tokens keep their
    /// first row.
    pub fn from_rows(
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
        dim: usize,
        geometry: EmbeddingGeometry,
    ) -> Result<Self> {
        let mut table = Self {
            vocab: HashMap::new(),
            tokens: Vec::new(),
            matrix: vec![0.0; dim],
            dim,
            geometry,
            rescaled: 0,
            tangent: OnceLock::new(),
        };
        for (token, mut row) in rows {
            if row.len() != dim {
                return Err(Error::Usage(format!(
                    "row for {token:?} has {} values, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Usage(format!("row for {token:?} is not finite")));
            }
            if table.vocab.contains_key(&token) {
                continue;
            }
            if geometry == EmbeddingGeometry::Poincare {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm >= 1.0 {
                    row.iter_mut().for_each(|v| *v *= BALL_CLAMP / norm);
                    table.rescaled += 1;
                }
            }
            table.vocab.insert(token.clone(), table.tokens.len() + 1);
            table.tokens.push(token);
            table.matrix.extend_from_slice(&row);
        }
        Ok(table)
    }

    /// Seeded Gaussian vectors for the given vocabulary.
    pub fn synthetic(vocab: &[String], dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let normal = Normal::new(0.0, SYNTHETIC_SIGMA).expect("valid sigma");
        let rows: Vec<(String, Vec<f64>)> = vocab
            .iter()
            .map(|t| (t.clone(), (0..dim).map(|_| normal.sample(&mut rng)).collect()))
            .collect();
        Self::from_rows(rows, dim, EmbeddingGeometry::Euclidean).expect("finite synthetic rows")
    }

    /// Number of real tokens, excluding the padding row.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn geometry(&self) -> EmbeddingGeometry {
        self.geometry
    }

    /// Row index of `token`, `0` when unknown.
    pub fn lookup(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(0)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    /// Row `index` after the lift and the log map back, as seen by the
    /// extractors.
    pub fn tangent_row(&self, index: usize) -> &[f64] {
        let all = self.tangent.get_or_init(|| {
            self.matrix
                .chunks(self.dim.max(1))
                .flat_map(|row| log_origin_space(&exp_origin_space(row)))
                .collect()
        });
        &all[index * self.dim..(index + 1) * self.dim]
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|k| self.tokens.get(k)).map(String::as_str)
    }
}

/// Reads `token v1 ... vd` lines.
pub fn load_table(path: &Path, geometry: EmbeddingGeometry) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut dim = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| Error::Format {
            path: path.to_owned(),
            line: n + 1,
            message: format!("bad number: {e}"),
        })?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(Error::Format {
                path: path.to_owned(),
                line: n + 1,
                message: format!("expected {expected} values, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                path: path.to_owned(),
                line: n + 1,
                message: "non-finite value".into(),
            });
        }
        rows.push((token.to_owned(), values));
    }
    let dim = dim.ok_or_else(|| Error::Format {
        path: path.to_owned(),
        line: 0,
        message: "no vectors".into(),
    })?;
    let table = EmbeddingTable::from_rows(rows, dim, geometry)?;
    if table.rescaled > 0 {
        log::warn!(
            "{}: pulled {} Poincaré rows back inside the ball",
            path.display(),
            table.rescaled
        );
    }
    Ok(table)
}

/// A document as a Euclidean matrix and its row-wise lift.
#[derive(Debug, Clone)]
pub struct DocumentEmbedding {
    /// `len x dim`, row-major.
    pub euclidean: Vec<f64>,
    /// Row-wise `log_o(exp_o(.))` of `euclidean`, `len x dim`.
    pub tangent: Vec<f64>,
    pub len: usize,
    pub dim: usize,
    /// Tokens before padding or truncation that were found in the table.
    pub known_tokens: usize,
}

impl DocumentEmbedding {
    /// The lifted rows `R^H`.
    pub fn hyperbolic(&self) -> Vec<LorentzVec> {
        self.euclidean
            .chunks(self.dim.max(1))
            .take(self.len)
            .map(|row| LorentzVec::from_raw(exp_origin_space(row)))
            .collect()
    }

    /// The hyperbolic rows log-mapped back to the tangent space at the
    /// origin; the `len x dim` matrix the extractors consume.
    pub fn tangent_matrix(&self) -> &[f64] {
        &self.tangent
    }
}

/// Maps tokens to rows, pads or truncates to `cap`, and lifts every row
/// with the exponential map at the origin.
pub fn embed_document(tokens: &[String], table: &EmbeddingTable, cap: usize) -> DocumentEmbedding {
    let ids: Vec<usize> = tokens.iter().map(|t| table.lookup(t)).collect();
    embed_ids(&ids, table, cap)
}

/// [`embed_document`] for pre-looked-up row indices.
pub fn embed_ids(ids: &[usize], table: &EmbeddingTable, cap: usize) -> DocumentEmbedding {
    let dim = table.dim();
    let mut euclidean = vec![0.0; cap * dim];
    let mut tangent = vec![0.0; cap * dim];
    for (slot, &id) in ids.iter().take(cap).enumerate() {
        euclidean[slot * dim..(slot + 1) * dim].copy_from_slice(table.row(id));
        tangent[slot * dim..(slot + 1) * dim].copy_from_slice(table.tangent_row(id));
    }
    DocumentEmbedding {
        euclidean,
        tangent,
        len: cap,
        dim,
        known_tokens: ids.iter().filter(|&&i| i != 0).count(),
    }
}
