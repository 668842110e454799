//! Plain-text checkpoints.
//!
//! ```text
//! head-checkpoint 1
//! meta <key> <value>
//! model embed_dim 100
//! ...
//! tensor <name> <d0>x<d1>...
//! <values, space separated>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Tensor};
use crate::data::seeded_rng;
use crate::error::{Error, Result};

pub const MAGIC: &str = "head-checkpoint";
pub const VERSION: u32 = 1;

/// Serialises parameters and free-form metadata.
pub fn to_string(params: &ModelParams, meta: &[(String, String)]) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    for (k, v) in meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    let c = &params.config;
    let widths: Vec<String> = c.widths.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(out, "model embed_dim {}", c.embed_dim);
    let _ = writeln!(out, "model filters_per_width {}", c.filters_per_width);
    let _ = writeln!(out, "model widths {}", widths.join(","));
    let _ = writeln!(out, "model doc_cap {}", c.doc_cap);
    let _ = writeln!(out, "model n_users {},{}", c.n_users[0], c.n_users[1]);
    let _ = writeln!(out, "model n_items {},{}", c.n_items[0], c.n_items[1]);
    for (name, t) in params.tensors() {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "tensor {name} {}", shape.join("x"));
        let values: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out.push_str("end\n");
    out
}

pub fn save(path: &Path, params: &ModelParams, meta: &[(String, String)]) -> Result<()> {
    fs::write(path, to_string(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParams, Vec<(String, String)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|(line, message)| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    })
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

fn pair(s: &str, line: usize) -> ParseResult<[usize; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([num(a, line)?, num(b, line)?]),
        _ => Err((line, format!("expected two comma-separated counts, got {s:?}"))),
    }
}

fn num(s: &str, line: usize) -> ParseResult<usize> {
    s.trim().parse().map_err(|_| (line, format!("bad integer {s:?}")))
}

/// Parses checkpoint text; errors carry a 1-based line number.
pub fn parse(text: &str) -> ParseResult<(ModelParams, Vec<(String, String)>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or((1, "empty checkpoint".to_string()))?;
    if header != format!("{MAGIC} {VERSION}") {
        return Err((1, format!("unsupported header {header:?}")));
    }
    let mut meta = Vec::new();
    let mut config = ModelConfig::new(0, [0, 0], [0, 0]);
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let mut ended = false;
    while let Some((n, line)) = lines.next() {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("meta"), Some(k), v) => meta.push((k.to_string(), v.unwrap_or("").to_string())),
            (Some("model"), Some(k), Some(v)) => match k {
                "embed_dim" => config.embed_dim = num(v, n)?,
                "filters_per_width" => config.filters_per_width = num(v, n)?,
                "widths" => config.widths = v.split(',').map(|w| num(w, n)).collect::<ParseResult<_>>()?,
                "doc_cap" => config.doc_cap = num(v, n)?,
                "n_users" => config.n_users = pair(v, n)?,
                "n_items" => config.n_items = pair(v, n)?,
                _ => return Err((n, format!("unknown model key {k:?}"))),
            },
            (Some("tensor"), Some(name), Some(shape)) => {
                let shape: Vec<usize> = shape.split('x').map(|d| num(d, n)).collect::<ParseResult<_>>()?;
                let (vn, values) = lines.next().ok_or((n + 1, "missing tensor values".to_string()))?;
                let data: Vec<f64> = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| (vn, format!("bad number {v:?}"))))
                    .collect::<ParseResult<_>>()?;
                if data.len() != shape.iter().product::<usize>() {
                    return Err((vn, format!("{name}: {} values for shape {shape:?}", data.len())));
                }
                tensors.push((name.to_string(), Tensor { shape, data }));
            }
            (Some("end"), None, None) => {
                ended = true;
                break;
            }
            _ => return Err((n, format!("unrecognised line {line:?}"))),
        }
    }
    if !ended {
        return Err((text.lines().count(), "truncated checkpoint".to_string()));
    }
    let mut params = ModelParams::init(config, &mut seeded_rng(0)).map_err(|e| (1, e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape.clone()))
        .collect();
    if expected.len() != tensors.len() {
        return Err((1, format!("expected {} tensors, found {}", expected.len(), tensors.len())));
    }
    for ((slot, (name, shape)), (got_name, t)) in params.tensors_mut().into_iter().zip(&expected).zip(tensors) {
        if *name != got_name || *shape != t.shape {
            return Err((1, format!("expected tensor {name} {shape:?}, found {got_name} {:?}", t.shape)));
        }
        *slot = t;
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let config = ModelConfig {
            embed_dim: 3,
            filters_per_width: 2,
            widths: vec![3, 4],
            doc_cap: 6,
            n_users: [2, 3],
            n_items: [4, 1],
        };
        let mut p = ModelParams::init(config, &mut seeded_rng(11)).unwrap();
        p.gate.b2.data[0] = 1.0 / 3.0;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let meta = vec![("lambda1".to_string(), "0.5".to_string())];
        let (q, m) = parse(&to_string(&p, &meta)).unwrap();
        assert_eq!(m, meta);
        assert_eq!(q.config, p.config);
        for ((_, a), (_, b)) in p.tensors().iter().zip(q.tensors()) {
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = params();
        save(&path, &p, &[]).unwrap();
        let (q, _) = load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn corrupted_values_report_line() {
        let text = to_string(&params(), &[]);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let idx = lines.iter().position(|l| l.starts_with("tensor")).unwrap() + 1;
        lines[idx] = lines[idx].replacen(' ', " oops ", 1);
        let err = parse(&lines.join("\n")).unwrap_err();
        assert_eq!(err.0, idx + 1);
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let text = to_string(&params(), &[]);
        let cut = &text[..text.len() / 2];
        assert!(parse(cut).is_err());
        assert_eq!(parse("something else\n").unwrap_err().0, 1);
    }
}
