//! Feature extractors, scale alignment, the domain discriminator and the
//! gated hyperbolic scorer.
//!
//! Parameters live in plain [`Tensor`]s owned by [`ModelParams`]. Every
//! forward pass binds them onto a fresh [`Tape`] through
//! [`ModelParams::bind`], either as trainable leaves or as frozen
//! constants.

use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::data::{Domain, Rng};
use crate::embedding::DocumentEmbedding;
use crate::error::{Error, Result};
use crate::geometry::SMALL_NORM;

pub mod checkpoint;

/// Clamp applied to discriminator probabilities.
pub const LOGIT_EPS: f64 = 1e-7;

/// Standard deviation of the user and item latent initialisation.
pub const LATENT_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }
}

/// Architecture and table sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filters_per_width: usize,
    pub widths: Vec<usize>,
    pub doc_cap: usize,
    /// Users per domain, indexed by [`Domain::index`].
    pub n_users: [usize; 2],
    pub n_items: [usize; 2],
}

impl ModelConfig {
    pub fn new(embed_dim: usize, n_users: [usize; 2], n_items: [usize; 2]) -> Self {
        Self {
            embed_dim,
            filters_per_width: 32,
            widths: vec![3, 4, 5],
            doc_cap: crate::embedding::DEFAULT_DOC_CAP,
            n_users,
            n_items,
        }
    }

    /// Width `d_f` of every extractor output.
    pub fn feature_dim(&self) -> usize {
        self.filters_per_width * self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let max_w = self.widths.iter().copied().max().unwrap_or(0);
        if self.embed_dim == 0 || self.filters_per_width == 0 || self.widths.is_empty() {
            return Err(Error::Config("extractor dimensions must be positive".into()));
        }
        if self.widths.contains(&0) || self.doc_cap < max_w {
            return Err(Error::Config(format!(
                "document cap {} must cover the widest kernel {max_w}",
                self.doc_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    SourceSpecific,
    TargetSpecific,
    Shared,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 3] = [
        ExtractorKind::SourceSpecific,
        ExtractorKind::TargetSpecific,
        ExtractorKind::Shared,
    ];

    pub fn specific(domain: Domain) -> Self {
        match domain {
            Domain::Source => ExtractorKind::SourceSpecific,
            Domain::Target => ExtractorKind::TargetSpecific,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            ExtractorKind::SourceSpecific => "source_specific",
            ExtractorKind::TargetSpecific => "target_specific",
            ExtractorKind::Shared => "shared",
        }
    }
}

/// Parallel convolutions, one kernel bank per width.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    /// `[filters, width, embed_dim]` each.
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Two affine layers with a ReLU in between; callers apply the sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            w1: Tensor::glorot(vec![hidden, input], input, hidden, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::glorot(vec![1, hidden], hidden, 1, rng),
            b2: Tensor::zeros(vec![1]),
        }
    }
}

/// `p_u` and `p_i` of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub users: Tensor,
    pub items: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Indexed by [`ExtractorKind::index`].
    pub extractors: [Extractor; 3],
    pub discriminator: Mlp,
    pub gate: Mlp,
    /// Indexed by [`Domain::index`].
    pub latents: [Latents; 2],
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let df = config.feature_dim();
        let e = config.embed_dim;
        let f = config.filters_per_width;
        let extractor = |rng: &mut Rng| Extractor {
            kernels: config
                .widths
                .iter()
                .map(|&w| Tensor::glorot(vec![f, w, e], w * e, f, rng))
                .collect(),
            biases: config.widths.iter().map(|_| Tensor::zeros(vec![f])).collect(),
        };
        let extractors = [extractor(rng), extractor(rng), extractor(rng)];
        let discriminator = Mlp::init(2 * df, df, rng);
        let gate = Mlp::init(2 * (df + 1), df, rng);
        let normal = Normal::new(0.0, LATENT_SIGMA).expect("valid sigma");
        let gaussian = |rows: usize, rng: &mut Rng| Tensor {
            shape: vec![rows, df],
            data: (0..rows * df).map(|_| normal.sample(rng)).collect(),
        };
        let latents = [0, 1].map(|d| Latents {
            users: gaussian(config.n_users[d], rng),
            items: gaussian(config.n_items[d], rng),
        });
        Ok(Self {
            config,
            extractors,
            discriminator,
            gate,
            latents,
        })
    }

    /// Zeroes latent rows of nodes without training interactions.
    pub fn zero_cold_latents(&mut self, domain: Domain, user_degrees: &[u32], item_degrees: &[u32]) {
        let df = self.config.feature_dim();
        let lat = &mut self.latents[domain.index()];
        for (table, degrees) in [(&mut lat.users, user_degrees), (&mut lat.items, item_degrees)] {
            let rows = table.shape[0];
            for r in 0..rows {
                if degrees.get(r).copied().unwrap_or(0) == 0 {
                    table.data[r * df..(r + 1) * df].fill(0.0);
                }
            }
        }
    }

    /// All tensors in a fixed order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for kind in ExtractorKind::ALL {
            let ex = &self.extractors[kind.index()];
            for (k, (w, b)) in ex.kernels.iter().zip(&ex.biases).enumerate() {
                let width = self.config.widths[k];
                out.push((format!("extractor.{}.w{width}.kernel", kind.name()), w));
                out.push((format!("extractor.{}.w{width}.bias", kind.name()), b));
            }
        }
        for (name, mlp) in [("discriminator", &self.discriminator), ("gate", &self.gate)] {
            out.push((format!("{name}.w1"), &mlp.w1));
            out.push((format!("{name}.b1"), &mlp.b1));
            out.push((format!("{name}.w2"), &mlp.w2));
            out.push((format!("{name}.b2"), &mlp.b2));
        }
        for d in [Domain::Source, Domain::Target] {
            let lat = &self.latents[d.index()];
            out.push((format!("latent.{d}.users"), &lat.users));
            out.push((format!("latent.{d}.items"), &lat.items));
        }
        out
    }

    /// Mutable access in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for ex in self.extractors.iter_mut() {
            for (w, b) in ex.kernels.iter_mut().zip(ex.biases.iter_mut()) {
                out.push(w);
                out.push(b);
            }
        }
        for mlp in [&mut self.discriminator, &mut self.gate] {
            out.push(&mut mlp.w1);
            out.push(&mut mlp.b1);
            out.push(&mut mlp.w2);
            out.push(&mut mlp.b2);
        }
        for lat in self.latents.iter_mut() {
            out.push(&mut lat.users);
            out.push(&mut lat.items);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Puts the parameters on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape, mode: BindMode) -> BoundParams<'a> {
        let trainable = mode == BindMode::Trainable;
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.data.clone(), t.shape.clone())
            } else {
                tape.constant(t.data.clone(), t.shape.clone())
            }
        };
        let mut leaves = Vec::new();
        let mut bind_ex = |ex: &Extractor, leaves: &mut Vec<Var>| {
            let mut kernels = Vec::new();
            let mut biases = Vec::new();
            for (w, b) in ex.kernels.iter().zip(&ex.biases) {
                let (wv, bv) = (put(w), put(b));
                leaves.push(wv);
                leaves.push(bv);
                kernels.push(wv);
                biases.push(bv);
            }
            BoundExtractor { kernels, biases }
        };
        let extractors = [
            bind_ex(&self.extractors[0], &mut leaves),
            bind_ex(&self.extractors[1], &mut leaves),
            bind_ex(&self.extractors[2], &mut leaves),
        ];
        let mut bind_mlp = |m: &Mlp, leaves: &mut Vec<Var>| {
            let b = BoundMlp {
                w1: put(&m.w1),
                b1: put(&m.b1),
                w2: put(&m.w2),
                b2: put(&m.b2),
            };
            leaves.extend([b.w1, b.b1, b.w2, b.b2]);
            b
        };
        let discriminator = bind_mlp(&self.discriminator, &mut leaves);
        let gate = bind_mlp(&self.gate, &mut leaves);
        let latents = if trainable {
            let l = [0, 1].map(|d| {
                let users = put(&self.latents[d].users);
                let items = put(&self.latents[d].items);
                Some((users, items))
            });
            for (u, i) in l.iter().flatten() {
                leaves.push(*u);
                leaves.push(*i);
            }
            l
        } else {
            [None, None]
        };
        BoundParams {
            params: self,
            extractors,
            discriminator,
            gate,
            latents,
            leaves,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindMode {
    /// Every tensor becomes a leaf; gradients are collected for all of them.
    Trainable,
    /// Constants only; latent rows are copied on demand.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct BoundExtractor {
    pub kernels: Vec<Var>,
    pub biases: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Parameters placed on a tape.
#[derive(Debug)]
pub struct BoundParams<'a> {
    params: &'a ModelParams,
    pub extractors: [BoundExtractor; 3],
    pub discriminator: BoundMlp,
    pub gate: BoundMlp,
    latents: [Option<(Var, Var)>; 2],
    leaves: Vec<Var>,
}

impl<'a> BoundParams<'a> {
    /// Leaves in [`ModelParams::tensors`] order; empty when frozen.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn user_latent(&self, tape: &mut Tape, domain: Domain, user: usize) -> Var {
        self.latent(tape, domain, user, true)
    }

    pub fn item_latent(&self, tape: &mut Tape, domain: Domain, item: usize) -> Var {
        self.latent(tape, domain, item, false)
    }

    fn latent(&self, tape: &mut Tape, domain: Domain, index: usize, user: bool) -> Var {
        let df = self.params.config.feature_dim();
        match self.latents[domain.index()] {
            Some((users, items)) => tape.row(if user { users } else { items }, index),
            None => {
                let lat = &self.params.latents[domain.index()];
                let table = if user { &lat.users } else { &lat.items };
                let rows = table.shape[0];
                // Nodes outside the table (unseen at training time) score cold.
                let values = if index < rows {
                    table.data[index * df..(index + 1) * df].to_vec()
                } else {
                    vec![0.0; df]
                };
                tape.vector_constant(values)
            }
        }
    }
}

/// Puts a document's tangent-space matrix on the tape.
pub fn document_input(tape: &mut Tape, doc: &DocumentEmbedding) -> Var {
    tape.constant(doc.tangent_matrix().to_vec(), vec![doc.len, doc.dim])
}

/// Convolution per width, tanh, max over time, concatenation. Pooling runs
/// before the tanh, which is monotone, so the result is the same.
pub fn extract_from(tape: &mut Tape, extractor: &BoundExtractor, input: Var) -> Var {
    let pooled: Vec<Var> = extractor
        .kernels
        .iter()
        .zip(&extractor.biases)
        .map(|(&k, &b)| {
            let c = tape.conv1d(input, k, Some(b));
            let m = tape.max_pool_time(c);
            tape.tanh(m)
        })
        .collect();
    tape.concat(&pooled)
}

/// Feature vector of length `d_f` for one document.
pub fn extract(tape: &mut Tape, bound: &BoundParams, kind: ExtractorKind, doc: &DocumentEmbedding) -> Var {
    let input = document_input(tape, doc);
    extract_from(tape, &bound.extractors[kind.index()], input)
}

/// Result of [`scale_align`].
#[derive(Debug, Clone, Copy)]
pub struct Aligned {
    pub var: Var,
    /// The input norm was below `1e-12` and it passed through unchanged.
    pub degenerate: bool,
}

/// `v / |v|`, recorded on the tape.
///
/// The input is first divided by its largest magnitude (a detached
/// constant). The composite equals `v / |v|` exactly in exact arithmetic,
/// so gradients are unaffected, but the result is bitwise invariant under
/// any rescaling that is itself exact in floating point.
pub fn scale_align(tape: &mut Tape, v: Var) -> Aligned {
    let values = tape.value(v);
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let max_abs = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(norm >= SMALL_NORM) || !(max_abs > 0.0) {
        return Aligned {
            var: v,
            degenerate: true,
        };
    }
    let m = tape.scalar_constant(max_abs);
    let y = tape.div_scalar(v, m);
    let n = tape.norm2(y);
    Aligned {
        var: tape.div_scalar(y, n),
        degenerate: false,
    }
}

/// Hidden ReLU layer, then the pre-sigmoid output.
fn mlp_logit(tape: &mut Tape, mlp: &BoundMlp, x: Var) -> Var {
    let h = tape.matmul(mlp.w1, x);
    let h = tape.add(h, mlp.b1);
    let h = tape.relu(h);
    let o = tape.matmul(mlp.w2, h);
    tape.add(o, mlp.b2)
}

/// `F_d`: probability that the input comes from the target domain,
/// clamped into `[1e-7, 1 - 1e-7]`.
pub fn discriminator(tape: &mut Tape, bound: &BoundParams, x: Var) -> Var {
    let o = mlp_logit(tape, &bound.discriminator, x);
    let p = tape.sigmoid(o);
    tape.clamp(p, LOGIT_EPS, 1.0 - LOGIT_EPS)
}

/// Extractor outputs for one (user, item) pair of one domain.
#[derive(Debug, Clone, Copy)]
pub struct PairFeatures {
    pub user_specific: Var,
    pub user_shared: Var,
    pub item_specific: Var,
    pub item_shared: Var,
}

/// Per-batch extractor outputs of both domains.
#[derive(Debug, Clone, Default)]
pub struct FeatureBundle {
    pub source: Vec<PairFeatures>,
    pub target: Vec<PairFeatures>,
}

/// `d_S`, `d_T` (specific path) and `d~_S`, `d~_T` (shareable path), one
/// entry per pair.
#[derive(Debug, Clone, Default)]
pub struct DomainLogits {
    pub specific_source: Vec<Var>,
    pub specific_target: Vec<Var>,
    pub shared_source: Vec<Var>,
    pub shared_target: Vec<Var>,
}

#[derive(Debug, Clone, Default)]
pub struct Discrimination {
    pub logits: DomainLogits,
    /// Every vector that entered `F_d`, for diagnostics.
    pub inputs: Vec<Var>,
    /// Inputs that were too small to normalise.
    pub degenerate: usize,
}

/// Runs the domain discriminator over a bundle. Specific features go
/// straight to `F_d`; shareable features pass a gradient-reversal layer
/// first. With `aligned`, both are scale-aligned before that.
pub fn discriminate(tape: &mut Tape, bound: &BoundParams, bundle: &FeatureBundle, aligned: bool) -> Discrimination {
    let mut out = Discrimination::default();
    let prepare = |tape: &mut Tape, a: Var, b: Var, out: &mut Discrimination| {
        let joined = tape.concat(&[a, b]);
        if aligned {
            let al = scale_align(tape, joined);
            out.degenerate += al.degenerate as usize;
            al.var
        } else {
            joined
        }
    };
    for (pairs, domain) in [(&bundle.source, Domain::Source), (&bundle.target, Domain::Target)] {
        for p in pairs {
            let s = prepare(tape, p.user_specific, p.item_specific, &mut out);
            let shared = prepare(tape, p.user_shared, p.item_shared, &mut out);
            let reversed = tape.grl(shared);
            out.inputs.push(s);
            out.inputs.push(reversed);
            let ds = discriminator(tape, bound, s);
            let dt = discriminator(tape, bound, reversed);
            match domain {
                Domain::Source => {
                    out.logits.specific_source.push(ds);
                    out.logits.shared_source.push(dt);
                }
                Domain::Target => {
                    out.logits.specific_target.push(ds);
                    out.logits.shared_target.push(dt);
                }
            }
        }
    }
    out
}

/// A point on the hyperboloid split into time and space parts.
#[derive(Debug, Clone, Copy)]
pub struct Lifted {
    pub time: Var,
    pub space: Var,
}

/// Exponential map at the origin, on the tape.
pub fn lift(tape: &mut Tape, v: Var) -> Lifted {
    let n = tape.norm2(v);
    if tape.scalar(n) < SMALL_NORM {
        let time = tape.scalar_constant(1.0);
        return Lifted { time, space: v };
    }
    let time = tape.cosh(n);
    let s = tape.sinh(n);
    let scaled = tape.mul(v, s);
    Lifted {
        time,
        space: tape.div_scalar(scaled, n),
    }
}

/// Lorentz distance between two lifted points.
pub fn lifted_distance(tape: &mut Tape, a: Lifted, b: Lifted) -> Var {
    let tt = tape.mul(a.time, b.time);
    let ss = tape.dot(a.space, b.space);
    let neg_inner = tape.sub(tt, ss);
    tape.arcosh(neg_inner)
}

/// Extractor outputs of one node: (specific, shareable).
pub type NodeFeatures = (Var, Var);

/// Gated distance between a user and an item; lower means a better match.
#[allow(clippy::too_many_arguments)]
pub fn score(
    tape: &mut Tape,
    bound: &BoundParams,
    domain: Domain,
    user: usize,
    item: usize,
    user_features: NodeFeatures,
    item_features: NodeFeatures,
) -> Var {
    let pu = bound.user_latent(tape, domain, user);
    let pi = bound.item_latent(tape, domain, item);
    let su = aggregate(tape, user_features, pu);
    let si = aggregate(tape, item_features, pi);
    score_aggregated(tape, bound, su, si)
}

/// `1/2 (S + S^) + p`.
pub fn aggregate(tape: &mut Tape, features: NodeFeatures, latent: Var) -> Var {
    let s = tape.add(features.0, features.1);
    let half = tape.scale(s, 0.5);
    tape.add(half, latent)
}

/// Score from already aggregated user and item vectors.
pub fn score_aggregated(tape: &mut Tape, bound: &BoundParams, user: Var, item: Var) -> Var {
    let hu = lift(tape, user);
    let hi = lift(tape, item);
    let dist = lifted_distance(tape, hu, hi);
    let joined = tape.concat(&[hu.time, hu.space, hi.time, hi.space]);
    let g = mlp_logit(tape, &bound.gate, joined);
    let gate = tape.sigmoid(g);
    tape.mul(gate, dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::seeded_rng;
    use crate::embedding::{embed_document, EmbeddingGeometry, EmbeddingTable};
    use crate::geometry::{exp_origin_space, lorentz_dist, LorentzVec};

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            filters_per_width: 2,
            widths: vec![3, 4, 5],
            doc_cap: 8,
            n_users: [3, 4],
            n_items: [5, 6],
        }
    }

    fn params() -> ModelParams {
        ModelParams::init(small_config(), &mut seeded_rng(5)).unwrap()
    }

    #[test]
    fn tensor_order_matches_mutable_order() {
        let mut p = params();
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|(_, t)| t.shape.clone()).collect();
        let shapes_mut: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape.clone()).collect();
        assert_eq!(shapes, shapes_mut);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Trainable);
        assert_eq!(bound.leaves().len(), shapes.len());
        for (leaf, shape) in bound.leaves().iter().zip(&shapes) {
            assert_eq!(tape.shape(*leaf), shape.as_slice());
        }
    }

    #[test]
    fn all_origin_document_gives_bias_constant() {
        let mut p = params();
        for b in &mut p.extractors[2].biases {
            b.data = vec![0.3, -0.2];
        }
        let table = EmbeddingTable::from_rows(vec![("a".into(), vec![0.1; 4])], 4, EmbeddingGeometry::Euclidean)
            .unwrap();
        let doc = embed_document(&["unknown".into()], &table, 8);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Frozen);
        let f = extract(&mut tape, &bound, ExtractorKind::Shared, &doc);
        let expected: Vec<f64> = [0.3f64, -0.2].repeat(3).iter().map(|b| b.tanh()).collect();
        assert_eq!(tape.value(f), expected.as_slice());
    }

    #[test]
    fn output_width_is_independent_of_document_length() {
        let p = params();
        let table = EmbeddingTable::synthetic(&["a".into(), "b".into()], 4, 1);
        for cap in [5, 8, 20] {
            let doc = embed_document(&["a".into(), "b".into()], &table, cap);
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape, BindMode::Frozen);
            let f = extract(&mut tape, &bound, ExtractorKind::SourceSpecific, &doc);
            assert_eq!(tape.value(f).len(), p.config.feature_dim());
        }
    }

    #[test]
    fn single_filter_extractor_matches_brute_force() {
        // One width-3 filter on a 1-d embedding: max_t tanh(b + sum_j k_j x_{t+j}).
        let xs = [0.2, -0.4, 0.9, 0.1, -0.3, 0.6];
        let k = [0.5, -1.0, 2.0];
        let b = 0.05;
        let mut tape = Tape::new();
        let input = tape.constant(xs.to_vec(), vec![6, 1]);
        let kv = tape.leaf(k.to_vec(), vec![1, 3, 1]);
        let bv = tape.leaf(vec![b], vec![1]);
        let ex = BoundExtractor {
            kernels: vec![kv],
            biases: vec![bv],
        };
        let out = extract_from(&mut tape, &ex, input);
        let brute = (0..4)
            .map(|t| (b + (0..3).map(|j| k[j] * xs[t + j]).sum::<f64>()).tanh())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(tape.value(out), &[brute]);
    }

    #[test]
    fn scale_align_examples() {
        let mut tape = Tape::new();
        let v = tape.leaf(vec![3.0, 4.0], vec![2]);
        let a = scale_align(&mut tape, v);
        assert!(!a.degenerate);
        let n: f64 = tape.value(a.var).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-15);

        let u = tape.leaf(vec![0.6, 0.8], vec![2]);
        let au = scale_align(&mut tape, u);
        for (x, y) in tape.value(au.var).iter().zip([0.6, 0.8]) {
            assert!((x - y).abs() < 1e-15);
        }

        let z = tape.leaf(vec![0.0, 1e-13], vec![2]);
        let az = scale_align(&mut tape, z);
        assert!(az.degenerate);
        assert_eq!(az.var, z);
    }

    #[test]
    fn scale_align_is_scale_invariant() {
        let mut rng = seeded_rng(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let c_dist = Uniform::new(1e-3, 1e3).unwrap();
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| normal.sample(&mut rng)).collect();
            let c: f64 = c_dist.sample(&mut rng);
            let mut tape = Tape::new();
            let a = tape.constant(v.clone(), vec![6]);
            let b = tape.constant(v.iter().map(|x| x * c).collect(), vec![6]);
            let na = scale_align(&mut tape, a).var;
            let nb = scale_align(&mut tape, b).var;
            for (x, y) in tape.value(na).iter().zip(tape.value(nb)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn zeroed_discriminator(mut p: ModelParams) -> ModelParams {
        for t in [&mut p.discriminator.w1, &mut p.discriminator.b1, &mut p.discriminator.w2, &mut p.discriminator.b2] {
            t.data.fill(0.0);
        }
        p
    }

    fn bundle_from(tape: &mut Tape, df: usize, scale: f64, seed: u64) -> FeatureBundle {
        let mut rng = seeded_rng(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut vec = |tape: &mut Tape| {
            let v: Vec<f64> = (0..df).map(|_| scale * normal.sample(&mut rng)).collect();
            tape.leaf(v, vec![df])
        };
        let mut pair = |tape: &mut Tape| PairFeatures {
            user_specific: vec(tape),
            user_shared: vec(tape),
            item_specific: vec(tape),
            item_shared: vec(tape),
        };
        FeatureBundle {
            source: vec![pair(tape), pair(tape)],
            target: vec![pair(tape)],
        }
    }

    #[test]
    fn zero_discriminator_outputs_one_half() {
        let p = zeroed_discriminator(params());
        let df = p.config.feature_dim();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Trainable);
        let bundle = bundle_from(&mut tape, df, 1.0, 1);
        let d = discriminate(&mut tape, &bound, &bundle, true);
        for v in d.logits.specific_source.iter().chain(&d.logits.shared_target) {
            assert_eq!(tape.scalar(*v), 0.5);
        }
        assert_eq!(d.inputs.len(), 6);
    }

    #[test]
    fn doubling_features_leaves_aligned_logits_bitwise_equal() {
        let p = params();
        let df = p.config.feature_dim();
        let run = |scale: f64| {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape, BindMode::Trainable);
            let bundle = bundle_from(&mut tape, df, scale, 9);
            let d = discriminate(&mut tape, &bound, &bundle, true);
            let l = &d.logits;
            l.specific_source
                .iter()
                .chain(&l.specific_target)
                .chain(&l.shared_source)
                .chain(&l.shared_target)
                .map(|v| tape.scalar(*v).to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1.0), run(2.0));
    }

    #[test]
    fn grl_negates_gradient_into_shared_features_only() {
        let p = params();
        let df = p.config.feature_dim();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Trainable);
        let shared = tape.leaf(vec![0.3; df], vec![df]);
        let s = tape.concat(&[shared, shared]);
        let through_grl = tape.grl(s);
        let d_grl = discriminator(&mut tape, &bound, through_grl);
        let d_plain = discriminator(&mut tape, &bound, s);
        let g_grl = tape.backward(d_grl).unwrap();
        let g_plain = tape.backward(d_plain).unwrap();
        for (a, b) in g_grl.get(shared).iter().zip(g_plain.get(shared)) {
            assert_eq!(*a, -b);
        }
        let w1 = bound.discriminator.w1;
        assert_eq!(g_grl.get(w1), g_plain.get(w1));
    }

    #[test]
    fn identical_vectors_score_zero() {
        let p = params();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Frozen);
        let df = p.config.feature_dim();
        let v = tape.vector_constant(vec![0.4; df]);
        let s = score_aggregated(&mut tape, &bound, v, v);
        assert_eq!(tape.scalar(s), 0.0);
    }

    #[test]
    fn score_with_half_gate_matches_geometry() {
        let mut p = params();
        p.config.filters_per_width = 1;
        p.config.widths = vec![3, 4];
        // d_f = 2; gate fixed at sigmoid(0) = 1/2
        p.gate = Mlp {
            w1: Tensor::zeros(vec![2, 6]),
            b1: Tensor::zeros(vec![2]),
            w2: Tensor::zeros(vec![1, 2]),
            b2: Tensor::zeros(vec![1]),
        };
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Frozen);
        let u = tape.vector_constant(vec![1.0, 0.0]);
        let i = tape.vector_constant(vec![0.0, 1.0]);
        let s = score_aggregated(&mut tape, &bound, u, i);
        let x = LorentzVec::new(exp_origin_space(&[1.0, 0.0])).unwrap();
        let y = LorentzVec::new(exp_origin_space(&[0.0, 1.0])).unwrap();
        let expected = 0.5 * lorentz_dist(&x, &y).unwrap();
        assert!((tape.scalar(s) - expected).abs() < 1e-12);
        assert!((tape.scalar(s) - 0.756_687_003_298_252).abs() < 1e-12);
    }

    #[test]
    fn gate_at_one_gives_raw_distance() {
        let mut p = params();
        p.gate.w1.data.fill(0.0);
        p.gate.w2.data.fill(0.0);
        p.gate.b2.data = vec![800.0];
        let df = p.config.feature_dim();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Frozen);
        let u = tape.vector_constant((0..df).map(|k| 0.1 * k as f64).collect());
        let i = tape.vector_constant(vec![0.2; df]);
        let s = score_aggregated(&mut tape, &bound, u, i);
        let x = LorentzVec::new(exp_origin_space(tape.value(u))).unwrap();
        let y = LorentzVec::new(exp_origin_space(tape.value(i))).unwrap();
        assert!((tape.scalar(s) - lorentz_dist(&x, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn frozen_latents_outside_table_are_zero() {
        let p = params();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, BindMode::Frozen);
        let v = bound.user_latent(&mut tape, Domain::Target, 1000);
        assert!(tape.value(v).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn cold_latents_are_zeroed() {
        let mut p = params();
        p.zero_cold_latents(Domain::Target, &[1, 0, 2, 0], &[0; 6]);
        let df = p.config.feature_dim();
        let users = &p.latents[1].users.data;
        assert!(users[df..2 * df].iter().all(|x| *x == 0.0));
        assert!(users[..df].iter().any(|x| *x != 0.0));
        assert!(p.latents[1].items.data.iter().all(|x| *x == 0.0));
    }
}
