//! Hierarchy embedding loss, domain loss, margin ranking loss and their
//! weighted total.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::DomainLogits;

/// Lower bound on the summed deviations inside the embedding loss.
pub const EMB_DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub margin: f64,
    pub curvature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            lambda2: 0.05,
            delta: 1e-5,
            margin: 0.1,
            curvature: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("delta", self.delta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.curvature != 1.0 {
            return Err(Error::Config(format!("only curvature 1 is supported, got {}", self.curvature)));
        }
        Ok(())
    }
}

/// `(max(d) - d) / max(d)`, or 1 when no node has any interaction.
/// Degrees above `max_degree` are treated as `max_degree`.
pub fn degree_weight(degree: u32, max_degree: u32) -> f64 {
    if max_degree == 0 {
        return 1.0;
    }
    let d = degree.min(max_degree);
    (max_degree - d) as f64 / max_degree as f64
}

/// One side (users or items) of one domain within a batch.
#[derive(Debug, Clone, Default)]
pub struct NodeGroup {
    /// Per-node `1/2 (S + S^)`.
    pub features: Vec<Var>,
    /// Per-node deviation weights; 1 everywhere for plain root alignment.
    pub weights: Vec<f64>,
}

impl NodeGroup {
    pub fn push(&mut self, feature: Var, weight: f64) {
        self.features.push(feature);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// `1/N sum_n w_n |h_n - root|^2`, with `root` the detached mean of the
/// group's features.
pub fn weighted_deviation(tape: &mut Tape, group: &NodeGroup) -> Result<Var> {
    if group.features.len() < 2 {
        return Err(Error::Usage(format!(
            "root alignment needs at least 2 nodes, got {}",
            group.features.len()
        )));
    }
    if group.weights.len() != group.features.len() {
        return Err(Error::Usage("one weight per node is required".into()));
    }
    let dim = tape.value(group.features[0]).len();
    let mut root = vec![0.0; dim];
    for &f in &group.features {
        let v = tape.value(f);
        if v.len() != dim {
            return Err(Error::Usage("node features differ in length".into()));
        }
        for (r, x) in root.iter_mut().zip(v) {
            *r += x;
        }
    }
    let n = group.features.len() as f64;
    root.iter_mut().for_each(|r| *r /= n);
    let root = tape.vector_constant(root);
    let mut terms = Vec::with_capacity(group.features.len());
    for (&f, &w) in group.features.iter().zip(&group.weights) {
        let diff = tape.sub(f, root);
        let sq = tape.dot(diff, diff);
        terms.push(tape.scale(sq, w));
    }
    let all = tape.concat(&terms);
    Ok(tape.mean(all))
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingLoss {
    pub loss: Var,
    /// The summed deviations fell below the floor.
    pub clamped: bool,
}

/// `1 / sqrt(sum over groups of the weighted deviations)`.
pub fn hierarchy_embedding_loss(tape: &mut Tape, groups: &[NodeGroup]) -> Result<EmbeddingLoss> {
    if groups.is_empty() {
        return Err(Error::Usage("no node groups".into()));
    }
    let parts = groups
        .iter()
        .map(|g| weighted_deviation(tape, g))
        .collect::<Result<Vec<_>>>()?;
    let joined = tape.concat(&parts);
    let total = tape.sum(joined);
    let clamped = tape.scalar(total) < EMB_DENOMINATOR_FLOOR;
    let floored = tape.clamp(total, EMB_DENOMINATOR_FLOOR, f64::INFINITY);
    Ok(EmbeddingLoss {
        loss: tape.powf(floored, -0.5),
        clamped,
    })
}

fn mean_neg_log(tape: &mut Tape, probs: &[Var], complement: bool) -> Result<Var> {
    if probs.is_empty() {
        return Err(Error::Usage("empty domain batch".into()));
    }
    let p = tape.concat(probs);
    let p = if complement {
        let neg = tape.scale(p, -1.0);
        tape.add_scalar(neg, 1.0)
    } else {
        p
    };
    let l = tape.log(p);
    let m = tape.mean(l);
    Ok(tape.scale(m, -1.0))
}

/// `-mean log(1 - d_S) - mean log(1 - d~_S) - mean log d_T - mean log d~_T`.
pub fn domain_loss(tape: &mut Tape, logits: &DomainLogits) -> Result<Var> {
    let a = mean_neg_log(tape, &logits.specific_source, true)?;
    let b = mean_neg_log(tape, &logits.shared_source, true)?;
    let c = mean_neg_log(tape, &logits.specific_target, false)?;
    let d = mean_neg_log(tape, &logits.shared_target, false)?;
    let ab = tape.add(a, b);
    let cd = tape.add(c, d);
    Ok(tape.add(ab, cd))
}

/// `max(p_pos^2 - p_neg^2 + margin, 0)`.
pub fn ranking_loss(tape: &mut Tape, pos: Var, neg: Var, margin: f64) -> Var {
    let a = tape.square(pos);
    let b = tape.square(neg);
    let diff = tape.sub(a, b);
    let shifted = tape.add_scalar(diff, margin);
    tape.max_zero(shifted)
}

/// Euclidean norm of every parameter taken together.
pub fn parameter_norm(tape: &mut Tape, params: &[Var]) -> Result<Var> {
    if params.is_empty() {
        return Err(Error::Usage("no parameters".into()));
    }
    let all = tape.concat(params);
    Ok(tape.norm2(all))
}

/// The four quantities combined by [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub emb: Var,
    pub domain: Var,
    pub pred: Var,
    pub theta_norm: Var,
}

/// `lambda1 L_emb + lambda2 L_d + L_pred + delta |theta|`.
///
/// A non-finite part yields [`Error::NonFinite`] naming it (with
/// iteration 0; the training loop fills in the real one).
pub fn total_loss(tape: &mut Tape, parts: &LossParts, weights: &LossWeights) -> Result<Var> {
    for (term, v) in [
        ("L_emb", parts.emb),
        ("L_d", parts.domain),
        ("L_pred", parts.pred),
        ("theta_norm", parts.theta_norm),
    ] {
        let value = tape.scalar(v);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term,
                iteration: 0,
                value,
            });
        }
    }
    let e = tape.scale(parts.emb, weights.lambda1);
    let d = tape.scale(parts.domain, weights.lambda2);
    let r = tape.scale(parts.theta_norm, weights.delta);
    let ed = tape.add(e, d);
    let edp = tape.add(ed, parts.pred);
    Ok(tape.add(edp, r))
}

/// Scalar values of one training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchLossReport {
    pub l_emb: f64,
    pub l_d: f64,
    pub l_pred: f64,
    pub theta_norm: f64,
    pub l_total: f64,
    /// Per-term gradient norms, when requested.
    pub grad_norms: Option<TermGradNorms>,
    /// Largest `| |x| - 1 |` over the inputs that reached the discriminator.
    pub max_disc_input_deviation: f64,
    /// Largest norm of an aggregated node feature in the batch.
    pub max_feature_norm: f64,
    /// The embedding-loss denominator hit its floor.
    pub emb_clamped: bool,
    /// Discriminator inputs too small to normalise.
    pub degenerate_alignments: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermGradNorms {
    pub emb: f64,
    pub domain: f64,
    pub pred: f64,
    pub reg: f64,
}
