//! Adam, the training step, early stopping and the λ grid search.

use std::collections::HashSet;

use rand::Rng as _;
use rayon::prelude::*;

use crate::autodiff::{Gradients, Tape, Var};
use crate::corpus::{DomainCorpus, EvalList};
use crate::data::{sample_negative, seeded_rng, Domain, Rng};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_lists, RankingMetrics};
use crate::model::{
    discriminate, document_input, extract_from, score_aggregated, BindMode, BoundParams, ExtractorKind,
    FeatureBundle, ModelConfig, ModelParams, NodeFeatures, PairFeatures,
};
use crate::objectives::{
    domain_loss, hierarchy_embedding_loss, parameter_norm, ranking_loss, total_loss, BatchLossReport, LossParts,
    LossWeights, NodeGroup, TermGradNorms,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Positives per domain per step.
    pub batch_size: usize,
    pub max_iters: u64,
    pub patience: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub aligned: bool,
    pub degree_norm: bool,
    /// Sampled negatives per evaluation list.
    pub candidates: usize,
    /// Record per-term gradient norms (one extra backward pass per term).
    pub grad_norms: bool,
    /// Train on source interactions too; off gives a target-only model.
    pub use_source: bool,
    pub filters_per_width: usize,
    pub widths: Vec<usize>,
    pub doc_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            max_iters: 5000,
            patience: 300,
            eval_every: 50,
            seed: 0,
            aligned: true,
            degree_norm: true,
            candidates: 99,
            grad_norms: false,
            use_source: true,
            filters_per_width: 32,
            widths: vec![3, 4, 5],
            doc_cap: crate::embedding::DEFAULT_DOC_CAP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.candidates == 0 {
            return bad("batch_size, eval_every and candidates must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, data: &TrainData) -> ModelConfig {
        ModelConfig {
            embed_dim: data.table.dim(),
            filters_per_width: self.filters_per_width,
            widths: self.widths.clone(),
            doc_cap: self.doc_cap,
            n_users: [data.source.n_users(), data.target.n_users()],
            n_items: [data.source.n_items(), data.target.n_items()],
        }
    }
}

/// Everything a run reads but never writes.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a DomainCorpus,
    pub target: &'a DomainCorpus,
    pub table: &'a EmbeddingTable,
}

impl<'a> TrainData<'a> {
    pub fn corpus(&self, domain: Domain) -> &'a DomainCorpus {
        match domain {
            Domain::Source => self.source,
            Domain::Target => self.target,
        }
    }
}

/// One bias-corrected Adam update of a single tensor.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for k in 0..param.len() {
        let g = grad[k];
        m[k] = beta1 * m[k] + (1.0 - beta1) * g;
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
        let mh = m[k] / c1;
        let vh = v[k] / c2;
        param[k] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Moment accumulators, shaped like [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], config: &TrainConfig) {
        self.t += 1;
        for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
            adam_update(
                &mut tensor.data,
                &grads[k],
                &mut self.m[k],
                &mut self.v[k],
                self.t,
                config.lr,
                config.beta1,
                config.beta2,
                config.adam_eps,
            );
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Adam,
    pub rng: Rng,
    pub iteration: u64,
    pub best_score: f64,
    pub since_best: u64,
}

impl TrainState {
    /// Seeded initialisation; latents of nodes without training
    /// interactions start at zero.
    pub fn init(data: &TrainData, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let mut params = ModelParams::init(config.model_config(data), &mut rng)?;
        for domain in [Domain::Source, Domain::Target] {
            let train = &data.corpus(domain).train;
            params.zero_cold_latents(domain, train.user_degrees(), train.item_degrees());
        }
        let adam = Adam::new(&params);
        Ok(Self {
            params,
            adam,
            rng,
            iteration: 0,
            best_score: f64::NEG_INFINITY,
            since_best: 0,
        })
    }
}

/// A training positive with its sampled negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<Triple>,
    pub target: Vec<Triple>,
}

impl Batch {
    pub fn part(&self, domain: Domain) -> &[Triple] {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }
}

/// Draws `batch_size` positives per domain independently, each with one
/// negative.
pub fn sample_batch(data: &TrainData, config: &TrainConfig, rng: &mut Rng) -> Result<Batch> {
    let draw = |corpus: &DomainCorpus, rng: &mut Rng| -> Result<Vec<Triple>> {
        let pos = corpus.train_positives();
        if pos.is_empty() {
            return Err(Error::EmptyDataset(format!("no positive {} training interactions", corpus.domain)));
        }
        (0..config.batch_size)
            .map(|_| {
                let it = &corpus.train.interactions[pos[rng.random_range(0..pos.len())]];
                let negative = sample_negative(&corpus.train, it.user, it.item, rng)?;
                Ok(Triple {
                    user: it.user,
                    positive: it.item,
                    negative,
                })
            })
            .collect()
    };
    let source = if config.use_source {
        draw(data.source, rng)?
    } else {
        Vec::new()
    };
    let target = draw(data.target, rng)?;
    Ok(Batch { source, target })
}

fn node_features(tape: &mut Tape, bound: &BoundParams, specific: ExtractorKind, doc: &crate::embedding::DocumentEmbedding) -> NodeFeatures {
    let x = document_input(tape, doc);
    let s = extract_from(tape, &bound.extractors[specific.index()], x);
    let h = extract_from(tape, &bound.extractors[ExtractorKind::Shared.index()], x);
    (s, h)
}

fn half_sum(tape: &mut Tape, f: NodeFeatures) -> Var {
    let s = tape.add(f.0, f.1);
    tape.scale(s, 0.5)
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward graph of one step, ready for backward.
pub struct StepGraph {
    pub tape: Tape,
    pub leaves: Vec<Var>,
    pub parts: LossParts,
    pub total: Var,
    pub disc_inputs: Vec<Var>,
    pub report: BatchLossReport,
}

/// Builds the loss graph for `batch` without touching `params`.
pub fn build_step(
    params: &ModelParams,
    data: &TrainData,
    batch: &Batch,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<StepGraph> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, BindMode::Trainable);
    let cap = params.config.doc_cap;
    let table = data.table;
    let mut bundle = FeatureBundle::default();
    let mut rank_terms = Vec::new();
    let mut groups = Vec::new();
    let mut max_feature_norm = 0.0f64;
    for domain in [Domain::Source, Domain::Target] {
        let triples = batch.part(domain);
        if triples.is_empty() {
            continue;
        }
        let corpus = data.corpus(domain);
        let kind = ExtractorKind::specific(domain);
        let (mut users, mut items) = (NodeGroup::default(), NodeGroup::default());
        let (mut seen_users, mut seen_items) = (HashSet::new(), HashSet::new());
        let mut pairs = Vec::with_capacity(triples.len());
        for t in triples {
            let fu = node_features(&mut tape, &bound, kind, &corpus.user_doc(t.user, Some(t.positive), table, cap));
            let fp = node_features(&mut tape, &bound, kind, &corpus.item_doc(t.positive, Some(t.user), table, cap));
            let fneg = node_features(&mut tape, &bound, kind, &corpus.item_doc(t.negative, Some(t.user), table, cap));
            let hu = half_sum(&mut tape, fu);
            let hp = half_sum(&mut tape, fp);
            let hn = half_sum(&mut tape, fneg);
            let pu = bound.user_latent(&mut tape, domain, t.user);
            let pp = bound.item_latent(&mut tape, domain, t.positive);
            let pn = bound.item_latent(&mut tape, domain, t.negative);
            let su = tape.add(hu, pu);
            let sp = tape.add(hp, pp);
            let sn = tape.add(hn, pn);
            for v in [su, sp, sn] {
                max_feature_norm = max_feature_norm.max(norm(tape.value(v)));
            }
            let pos = score_aggregated(&mut tape, &bound, su, sp);
            let neg = score_aggregated(&mut tape, &bound, su, sn);
            rank_terms.push(ranking_loss(&mut tape, pos, neg, weights.margin));
            pairs.push(PairFeatures {
                user_specific: fu.0,
                user_shared: fu.1,
                item_specific: fp.0,
                item_shared: fp.1,
            });
            if seen_users.insert(t.user) {
                users.push(hu, corpus.user_weight(t.user, config.degree_norm));
            }
            for (item, h) in [(t.positive, hp), (t.negative, hn)] {
                if seen_items.insert(item) {
                    items.push(h, corpus.item_weight(item, config.degree_norm));
                }
            }
        }
        match domain {
            Domain::Source => bundle.source = pairs,
            Domain::Target => bundle.target = pairs,
        }
        groups.push(users);
        groups.push(items);
    }
    groups.retain(|g| g.len() >= 2);
    let (emb, emb_clamped) = if groups.is_empty() {
        (tape.scalar_constant(0.0), false)
    } else {
        let e = hierarchy_embedding_loss(&mut tape, &groups)?;
        (e.loss, e.clamped)
    };
    let (domain_term, disc_inputs, degenerate) = if bundle.source.is_empty() || bundle.target.is_empty() {
        (tape.scalar_constant(0.0), Vec::new(), 0)
    } else {
        let d = discriminate(&mut tape, &bound, &bundle, config.aligned);
        (domain_loss(&mut tape, &d.logits)?, d.inputs, d.degenerate)
    };
    let joined = tape.concat(&rank_terms);
    let pred = tape.mean(joined);
    let leaves = bound.leaves().to_vec();
    let theta_norm = parameter_norm(&mut tape, &leaves)?;
    let parts = LossParts {
        emb,
        domain: domain_term,
        pred,
        theta_norm,
    };
    let total = total_loss(&mut tape, &parts, weights)?;
    let max_disc_input_deviation = disc_inputs
        .iter()
        .map(|&v| (norm(tape.value(v)) - 1.0).abs())
        .fold(0.0, f64::max);
    let report = BatchLossReport {
        l_emb: tape.scalar(emb),
        l_d: tape.scalar(domain_term),
        l_pred: tape.scalar(pred),
        theta_norm: tape.scalar(theta_norm),
        l_total: tape.scalar(total),
        grad_norms: None,
        max_disc_input_deviation,
        max_feature_norm,
        emb_clamped,
        degenerate_alignments: degenerate,
    };
    Ok(StepGraph {
        tape,
        leaves,
        parts,
        total,
        disc_inputs,
        report,
    })
}

fn leaf_grads(grads: &Gradients, leaves: &[Var]) -> Vec<Vec<f64>> {
    leaves.iter().map(|&l| grads.get(l)).collect()
}

fn grad_norm(grads: &Gradients, leaves: &[Var]) -> f64 {
    leaves
        .iter()
        .filter_map(|&l| grads.get_ref(l))
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// One forward/backward pass and Adam update.
pub fn train_step(
    state: &mut TrainState,
    data: &TrainData,
    batch: &Batch,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<BatchLossReport> {
    let iteration = state.iteration + 1;
    let tag = |e: Error| match e {
        Error::NonFinite { term, value, .. } => Error::NonFinite { term, iteration, value },
        other => other,
    };
    let graph = build_step(&state.params, data, batch, weights, config).map_err(tag)?;
    let grads = graph.tape.backward(graph.total)?;
    let flat = leaf_grads(&grads, &graph.leaves);
    if let Some(value) = flat.iter().flatten().copied().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: "gradient",
            iteration,
            value,
        });
    }
    let mut report = graph.report;
    if config.grad_norms {
        let per_term = |v: Var, scale: f64| -> Result<f64> { Ok(scale * grad_norm(&graph.tape.backward(v)?, &graph.leaves)) };
        report.grad_norms = Some(TermGradNorms {
            emb: per_term(graph.parts.emb, weights.lambda1)?,
            domain: per_term(graph.parts.domain, weights.lambda2)?,
            pred: per_term(graph.parts.pred, 1.0)?,
            reg: per_term(graph.parts.theta_norm, weights.delta)?,
        });
    }
    state.adam.step(&mut state.params, &flat, config);
    state.iteration = iteration;
    if !state.params.all_finite() {
        return Err(Error::NonFinite {
            term: "parameters",
            iteration,
            value: f64::NAN,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub iteration: u64,
    pub metrics: RankingMetrics,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters at the best validation evaluation.
    pub params: ModelParams,
    /// Parameters after the last executed step.
    pub last: ModelParams,
    /// One report per executed iteration.
    pub history: Vec<BatchLossReport>,
    pub evals: Vec<EvalPoint>,
    pub best_iteration: u64,
    pub best_ndcg: f64,
    pub initial_ndcg: f64,
    pub iterations: u64,
}

/// Validation lists drawn with a stream derived from the run seed.
pub fn validation_lists(data: &TrainData, config: &TrainConfig) -> Result<Vec<EvalList>> {
    let mut rng = seeded_rng(config.seed ^ 0x005e_ed0f_7a11);
    let lists = data.target.eval_lists(&data.target.valid, config.candidates, &mut rng);
    if lists.is_empty() {
        return Err(Error::EmptyDataset("no positive validation interactions".into()));
    }
    Ok(lists)
}

/// Trains until validation NDCG@10 stalls for `patience` iterations or
/// `max_iters` is reached, and returns the best checkpoint.
pub fn fit(data: &TrainData, config: &TrainConfig, weights: &LossWeights) -> Result<FitResult> {
    fit_with(data, config, weights, |_, _| {})
}

/// [`fit`] with a callback after every step.
pub fn fit_with(
    data: &TrainData,
    config: &TrainConfig,
    weights: &LossWeights,
    mut on_step: impl FnMut(&TrainState, &BatchLossReport),
) -> Result<FitResult> {
    weights.validate()?;
    let mut state = TrainState::init(data, config)?;
    let lists = validation_lists(data, config)?;
    let initial = evaluate_lists(&state.params, data, Domain::Target, &lists)?;
    let mut evals = vec![EvalPoint {
        iteration: 0,
        metrics: initial,
    }];
    let mut best_params = state.params.clone();
    let mut best_iteration = 0;
    state.best_score = initial.ndcg;
    let mut history = Vec::new();
    while state.iteration < config.max_iters {
        let batch = sample_batch(data, config, &mut state.rng)?;
        let report = train_step(&mut state, data, &batch, weights, config)?;
        on_step(&state, &report);
        history.push(report);
        let it = state.iteration;
        if it % config.eval_every == 0 {
            let m = evaluate_lists(&state.params, data, Domain::Target, &lists)?;
            evals.push(EvalPoint { iteration: it, metrics: m });
            if m.ndcg > state.best_score {
                state.best_score = m.ndcg;
                best_params = state.params.clone();
                best_iteration = it;
            }
            state.since_best = it - best_iteration;
            if state.since_best >= config.patience {
                break;
            }
        }
    }
    Ok(FitResult {
        params: best_params,
        last: state.params,
        history,
        evals,
        best_iteration,
        best_ndcg: state.best_score,
        initial_ndcg: initial.ndcg,
        iterations: state.iteration,
    })
}

/// Loss curves as `epoch,L_emb,L_d,L_pred,L_total` rows, one per
/// iteration.
pub fn loss_curves_csv(history: &[BatchLossReport]) -> String {
    let mut out = String::from("epoch,L_emb,L_d,L_pred,L_total\n");
    for (k, r) in history.iter().enumerate() {
        out.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", k + 1, r.l_emb, r.l_d, r.l_pred, r.l_total));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Validation NDCG@10, rows follow `lambda1`, columns `lambda2`.
    pub matrix: Vec<Vec<f64>>,
    pub best: (f64, f64),
    pub best_score: f64,
}

impl GridResult {
    /// Picks the argmax of `matrix`, preferring smaller `(lambda1, lambda2)`
    /// on ties.
    pub fn from_matrix(lambda1: Vec<f64>, lambda2: Vec<f64>, matrix: Vec<Vec<f64>>) -> Self {
        let mut best = (f64::INFINITY, f64::INFINITY);
        let mut best_score = f64::NEG_INFINITY;
        for (r, &l1) in lambda1.iter().enumerate() {
            for (c, &l2) in lambda2.iter().enumerate() {
                let s = matrix[r][c];
                if s > best_score || (s == best_score && (l1, l2) < best) {
                    best = (l1, l2);
                    best_score = s;
                }
            }
        }
        Self {
            lambda1,
            lambda2,
            matrix,
            best,
            best_score,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda1\\lambda2");
        for l2 in &self.lambda2 {
            out.push_str(&format!(",{l2}"));
        }
        out.push('\n');
        for (l1, row) in self.lambda1.iter().zip(&self.matrix) {
            out.push_str(&l1.to_string());
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one model per `(lambda1, lambda2)` cell, in parallel.
pub fn grid_search(
    data: &TrainData,
    lambda1: &[f64],
    lambda2: &[f64],
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<GridResult> {
    if lambda1.is_empty() || lambda2.is_empty() {
        return Err(Error::Usage("grids must be non-empty".into()));
    }
    let cells: Vec<(usize, usize)> = (0..lambda1.len())
        .flat_map(|r| (0..lambda2.len()).map(move |c| (r, c)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(r, c)| {
            let w = LossWeights {
                lambda1: lambda1[r],
                lambda2: lambda2[c],
                ..*weights
            };
            fit(data, config, &w).map(|f| f.best_ndcg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut matrix = vec![vec![0.0; lambda2.len()]; lambda1.len()];
    for (&(r, c), s) in cells.iter().zip(scores) {
        matrix[r][c] = s;
    }
    Ok(GridResult::from_matrix(lambda1.to_vec(), lambda2.to_vec(), matrix))
}
