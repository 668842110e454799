//! The keyed-text evaluation report and the discriminator BCE probe.

use std::fmt::Write as _;

use rand::seq::index;

use crate::autodiff::Tape;
use crate::corpus::EvalList;
use crate::data::{seeded_rng, Domain};
use crate::error::{Error, Result};
use crate::model::{discriminator, document_input, extract_from, scale_align, BindMode, ExtractorKind, ModelParams};
use crate::training::TrainData;

use super::hierarchy::{item_hierarchy_fidelity, Fidelity};
use super::{evaluate_lists, RankingMetrics};

/// Items sampled for the hierarchy diagnostic.
pub const FIDELITY_SAMPLE: usize = 1000;

/// Domain-classification cross-entropy of the specific-feature path:
/// `1/2 (-mean log(1 - d_S) - mean log d_T)` over up to `pairs` training
/// pairs per domain.
pub fn discriminator_bce(params: &ModelParams, data: &TrainData, aligned: bool, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut terms = [0.0; 2];
    for domain in [Domain::Source, Domain::Target] {
        let corpus = data.corpus(domain);
        let pos = corpus.train_positives();
        if pos.is_empty() {
            return Err(Error::EmptyDataset(format!("no positive {domain} pairs")));
        }
        let picks = index::sample(&mut rng, pos.len(), pairs.min(pos.len()));
        let cap = params.config.doc_cap;
        let mut total = 0.0;
        for k in picks.iter() {
            let it = &corpus.train.interactions[pos[k]];
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, BindMode::Frozen);
            let ex = &bound.extractors[ExtractorKind::specific(domain).index()];
            let xu = document_input(&mut tape, &corpus.user_doc(it.user, Some(it.item), data.table, cap));
            let xi = document_input(&mut tape, &corpus.item_doc(it.item, Some(it.user), data.table, cap));
            let su = extract_from(&mut tape, ex, xu);
            let si = extract_from(&mut tape, ex, xi);
            let joined = tape.concat(&[su, si]);
            let fed = if aligned { scale_align(&mut tape, joined).var } else { joined };
            let dv = discriminator(&mut tape, &bound, fed);
            let d = tape.scalar(dv);
            total -= match domain {
                Domain::Source => (1.0 - d).ln(),
                Domain::Target => d.ln(),
            };
        }
        terms[domain.index()] = total / picks.len() as f64;
    }
    Ok(0.5 * (terms[0] + terms[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: RankingMetrics,
    pub hierarchy: Fidelity,
    pub discriminator_bce: f64,
    /// Outcome of the analytic checks, when they were run.
    pub checks_passed: Option<bool>,
}

impl EvalReport {
    pub fn compute(params: &ModelParams, data: &TrainData, lists: &[EvalList], aligned: bool, seed: u64) -> Result<Self> {
        Ok(Self {
            metrics: evaluate_lists(params, data, Domain::Target, lists)?,
            hierarchy: item_hierarchy_fidelity(params, data, Domain::Target, FIDELITY_SAMPLE, seed)?,
            discriminator_bce: discriminator_bce(params, data, aligned, 200, seed)?,
            checks_passed: None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ndcg@10 {:?}", self.metrics.ndcg);
        let _ = writeln!(out, "hr@10 {:?}", self.metrics.hr);
        let _ = writeln!(out, "lists {}", self.metrics.lists);
        let _ = writeln!(out, "hierarchy_rho {:?}", self.hierarchy.rho);
        let _ = writeln!(out, "hierarchy_flagged {}", self.hierarchy.flagged);
        let _ = writeln!(out, "hierarchy_items {}", self.hierarchy.items);
        let _ = writeln!(out, "discriminator_bce {:?}", self.discriminator_bce);
        let checks = match self.checks_passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skipped",
        };
        let _ = writeln!(out, "theorem_checks {checks}");
        out
    }
}
