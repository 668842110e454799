//! Ranking metrics, hierarchy diagnostics, theorem checks and the
//! synthetic benchmark.

use rayon::prelude::*;

use crate::autodiff::{sigmoid, Tape};
use crate::corpus::EvalList;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::geometry::SMALL_NORM;
use crate::model::{document_input, extract_from, score_aggregated, BindMode, ExtractorKind, ModelParams};
use crate::training::TrainData;

pub mod hierarchy;
pub mod report;
pub mod selfcheck;
pub mod synthetic;
pub mod theorems;
pub mod viz;

pub use hierarchy::{hierarchy_fidelity, item_hierarchy_fidelity, spearman, Fidelity};
pub use report::EvalReport;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use theorems::{check_theorems, CheckOptions, TheoremReport};

/// Default cutoff of both metrics.
pub const TOP_K: usize = 10;

/// Candidates in ascending score order with the 1-based rank of the
/// held-out positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub rank: usize,
}

impl RankedList {
    /// Sorts by score (lower first) and item id on ties.
    pub fn from_scores(candidates: &[usize], scores: &[f64], positive: usize) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != scores.len() {
            return Err(Error::Usage("a ranked list needs one score per candidate".into()));
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(candidates[a].cmp(&candidates[b]))
        });
        let items: Vec<usize> = order.iter().map(|&k| candidates[k]).collect();
        let rank = items
            .iter()
            .position(|&i| i == positive)
            .ok_or_else(|| Error::Usage(format!("positive {positive} is not a candidate")))?
            + 1;
        Ok(Self { items, rank })
    }

    /// A list whose positive sits at `rank`.
    pub fn with_rank(rank: usize) -> Self {
        Self {
            items: Vec::new(),
            rank,
        }
    }
}

/// `1 / log2(rank + 1)` inside the cutoff, else 0.
pub fn ndcg_at_k(list: &RankedList, k: usize) -> Result<f64> {
    if list.rank == 0 {
        return Err(Error::Usage("empty ranked list".into()));
    }
    Ok(if list.rank <= k {
        1.0 / ((list.rank + 1) as f64).log2()
    } else {
        0.0
    })
}

/// 1 inside the cutoff, else 0.
pub fn hr_at_k(list: &RankedList, k: usize) -> Result<f64> {
    if list.rank == 0 {
        return Err(Error::Usage("empty ranked list".into()));
    }
    Ok(if list.rank <= k { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankingMetrics {
    pub ndcg: f64,
    pub hr: f64,
    pub lists: usize,
}

impl RankingMetrics {
    pub fn from_lists(lists: &[RankedList], k: usize) -> Result<Self> {
        if lists.is_empty() {
            return Err(Error::Usage("no ranked lists".into()));
        }
        let n = lists.len() as f64;
        let mut ndcg = 0.0;
        let mut hr = 0.0;
        for l in lists {
            ndcg += ndcg_at_k(l, k)?;
            hr += hr_at_k(l, k)?;
        }
        Ok(Self {
            ndcg: ndcg / n,
            hr: hr / n,
            lists: lists.len(),
        })
    }
}

/// `1/2 (S + S^) + p` for one node, computed without gradients.
fn aggregated_node(params: &ModelParams, data: &TrainData, domain: Domain, node: usize, user: bool) -> Vec<f64> {
    let corpus = data.corpus(domain);
    let cap = params.config.doc_cap;
    let doc = if user {
        corpus.user_doc(node, None, data.table, cap)
    } else {
        corpus.item_doc(node, None, data.table, cap)
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, BindMode::Frozen);
    let x = document_input(&mut tape, &doc);
    let s = extract_from(&mut tape, &bound.extractors[ExtractorKind::specific(domain).index()], x);
    let h = extract_from(&mut tape, &bound.extractors[ExtractorKind::Shared.index()], x);
    let latent = if user {
        bound.user_latent(&mut tape, domain, node)
    } else {
        bound.item_latent(&mut tape, domain, node)
    };
    let (s, h, p) = (tape.value(s), tape.value(h), tape.value(latent));
    s.iter()
        .zip(h)
        .zip(p)
        .map(|((a, b), c)| 0.5 * (a + b) + c)
        .collect()
}

/// Extractor output `1/2 (S + S^)` of one item, without the latent.
pub fn item_feature(params: &ModelParams, data: &TrainData, domain: Domain, item: usize) -> Vec<f64> {
    let doc = data.corpus(domain).item_doc(item, None, data.table, params.config.doc_cap);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, BindMode::Frozen);
    let x = document_input(&mut tape, &doc);
    let s = extract_from(&mut tape, &bound.extractors[ExtractorKind::specific(domain).index()], x);
    let h = extract_from(&mut tape, &bound.extractors[ExtractorKind::Shared.index()], x);
    tape.value(s)
        .iter()
        .zip(tape.value(h))
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

/// Gated distance between aggregated user and item vectors.
pub fn score_vectors(params: &ModelParams, user: &[f64], item: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, BindMode::Frozen);
    let u = tape.vector_constant(user.to_vec());
    let i = tape.vector_constant(item.to_vec());
    let s = score_aggregated(&mut tape, &bound, u, i);
    tape.scalar(s)
}

/// A node lifted onto the hyperboloid together with its half of the gate's
/// first layer, so that pair scores need no tape.
#[derive(Debug, Clone)]
struct ScoringNode {
    time: f64,
    space: Vec<f64>,
    gate_half: Vec<f64>,
}

impl ScoringNode {
    /// `offset` selects the user (0) or item (1) block of the gate input.
    fn new(params: &ModelParams, v: &[f64], offset: usize) -> Self {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (time, space) = if n < SMALL_NORM {
            (1.0, v.to_vec())
        } else {
            let s = n.sinh();
            (n.cosh(), v.iter().map(|x| x * s / n).collect())
        };
        let w1 = &params.gate.w1;
        let (hidden, width) = (w1.shape[0], w1.shape[1]);
        let block = width / 2;
        let gate_half = (0..hidden)
            .map(|r| {
                let row = &w1.data[r * width + offset * block..r * width + (offset + 1) * block];
                row[0] * time + row[1..].iter().zip(&space).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        Self { time, space, gate_half }
    }
}

/// The tape-free counterpart of [`score_aggregated`].
fn score_nodes(params: &ModelParams, user: &ScoringNode, item: &ScoringNode) -> f64 {
    let gate = &params.gate;
    let mut logit = gate.b2.data[0];
    for (r, w) in gate.w2.data.iter().enumerate() {
        let h = user.gate_half[r] + item.gate_half[r] + gate.b1.data[r];
        logit += w * h.max(0.0);
    }
    let inner = user.time * item.time - user.space.iter().zip(&item.space).map(|(a, b)| a * b).sum::<f64>();
    sigmoid(logit) * inner.max(1.0).acosh()
}

/// Scores every candidate of every list.
pub fn score_lists(params: &ModelParams, data: &TrainData, domain: Domain, lists: &[EvalList]) -> Vec<Vec<f64>> {
    let mut users: Vec<usize> = lists.iter().map(|l| l.user).collect();
    let mut items: Vec<usize> = lists.iter().flat_map(|l| l.candidates.iter().copied()).collect();
    users.sort_unstable();
    users.dedup();
    items.sort_unstable();
    items.dedup();
    let user_nodes: Vec<ScoringNode> = users
        .par_iter()
        .map(|&u| ScoringNode::new(params, &aggregated_node(params, data, domain, u, true), 0))
        .collect();
    let item_nodes: Vec<ScoringNode> = items
        .par_iter()
        .map(|&i| ScoringNode::new(params, &aggregated_node(params, data, domain, i, false), 1))
        .collect();
    let lookup = |ids: &[usize], id: usize| ids.binary_search(&id).expect("node was collected");
    lists
        .iter()
        .map(|l| {
            let u = &user_nodes[lookup(&users, l.user)];
            l.candidates
                .iter()
                .map(|&c| score_nodes(params, u, &item_nodes[lookup(&items, c)]))
                .collect()
        })
        .collect()
}

/// Ranks every list by model score.
pub fn rank_lists(params: &ModelParams, data: &TrainData, domain: Domain, lists: &[EvalList]) -> Result<Vec<RankedList>> {
    score_lists(params, data, domain, lists)
        .iter()
        .zip(lists)
        .map(|(scores, l)| RankedList::from_scores(&l.candidates, scores, l.positive))
        .collect()
}

/// NDCG@10 and HR@10 over `lists`.
pub fn evaluate_lists(params: &ModelParams, data: &TrainData, domain: Domain, lists: &[EvalList]) -> Result<RankingMetrics> {
    RankingMetrics::from_lists(&rank_lists(params, data, domain, lists)?, TOP_K)
}
