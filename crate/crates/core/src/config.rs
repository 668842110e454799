//! Flat `key = value` configuration covering [`TrainConfig`] and
//! [`LossWeights`].

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub weights: LossWeights,
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

pub fn parse_switch(value: &str) -> Option<bool> {
    match value {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    parse_switch(value).ok_or_else(|| format!("invalid value {value:?} for {key}; expected on or off"))
}

impl RunConfig {
    /// Applies one assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let w = &mut self.weights;
        match key {
            "lr" => t.lr = parse_num(key, value)?,
            "beta1" => t.beta1 = parse_num(key, value)?,
            "beta2" => t.beta2 = parse_num(key, value)?,
            "adam_eps" => t.adam_eps = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "max_iters" => t.max_iters = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "aligned" => t.aligned = parse_bool(key, value)?,
            "degree_norm" => t.degree_norm = parse_bool(key, value)?,
            "candidates" => t.candidates = parse_num(key, value)?,
            "grad_norms" => t.grad_norms = parse_bool(key, value)?,
            "use_source" => t.use_source = parse_bool(key, value)?,
            "filters_per_width" => t.filters_per_width = parse_num(key, value)?,
            "widths" => {
                t.widths = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "doc_cap" => t.doc_cap = parse_num(key, value)?,
            "lambda1" => w.lambda1 = parse_num(key, value)?,
            "lambda2" => w.lambda2 = parse_num(key, value)?,
            "delta" => w.delta = parse_num(key, value)?,
            "margin" => w.margin = parse_num(key, value)?,
            "curvature" => w.curvature = parse_num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses on top of the defaults. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| (n + 1, format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|m| (n + 1, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text).map_err(|(line, message)| Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.weights.validate()
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let w = &self.weights;
        let sw = |b: bool| if b { "on" } else { "off" };
        let widths: Vec<String> = t.widths.iter().map(|x| x.to_string()).collect();
        let mut out = String::new();
        let _ = writeln!(out, "lr = {:?}", t.lr);
        let _ = writeln!(out, "beta1 = {:?}", t.beta1);
        let _ = writeln!(out, "beta2 = {:?}", t.beta2);
        let _ = writeln!(out, "adam_eps = {:?}", t.adam_eps);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "max_iters = {}", t.max_iters);
        let _ = writeln!(out, "patience = {}", t.patience);
        let _ = writeln!(out, "eval_every = {}", t.eval_every);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "aligned = {}", sw(t.aligned));
        let _ = writeln!(out, "degree_norm = {}", sw(t.degree_norm));
        let _ = writeln!(out, "candidates = {}", t.candidates);
        let _ = writeln!(out, "grad_norms = {}", sw(t.grad_norms));
        let _ = writeln!(out, "use_source = {}", sw(t.use_source));
        let _ = writeln!(out, "filters_per_width = {}", t.filters_per_width);
        let _ = writeln!(out, "widths = {}", widths.join(","));
        let _ = writeln!(out, "doc_cap = {}", t.doc_cap);
        let _ = writeln!(out, "lambda1 = {:?}", w.lambda1);
        let _ = writeln!(out, "lambda2 = {:?}", w.lambda2);
        let _ = writeln!(out, "delta = {:?}", w.delta);
        let _ = writeln!(out, "margin = {:?}", w.margin);
        let _ = writeln!(out, "curvature = {:?}", w.curvature);
        out
    }
}
