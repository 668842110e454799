//! Seeded two-domain review data with power-law item popularity and
//! topic-word reviews.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::corpus::DomainCorpus;
use crate::data::{seeded_rng, split_dataset, Domain, DomainDataset, Interaction, Interner, Rng, SplitSpec};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::training::TrainData;

const POSITIVE_WORDS: [&str; 6] = ["great", "love", "excellent", "perfect", "happy", "recommend"];
const NEGATIVE_WORDS: [&str; 6] = ["poor", "broke", "awful", "disappointed", "refund", "cheap"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Indexed by [`Domain::index`].
    pub users: [usize; 2],
    pub items: [usize; 2],
    /// Item degrees follow `P(d) ~ d^-exponent` on `[min_degree, max_degree]`.
    pub exponent: f64,
    pub min_degree: u32,
    pub max_degree: u32,
    /// Preference dimensions per domain.
    pub topics: usize,
    /// Leading dimensions whose vocabulary both domains share.
    pub shared_topics: usize,
    /// Standard deviation of the rating noise.
    pub noise: f64,
    /// How sharply users pick items that match their preferences.
    pub selectivity: f64,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub review_len: (usize, usize),
    pub seed: u64,
}

impl SyntheticSpec {
    /// A pair small enough to train in seconds.
    pub fn desk(seed: u64) -> Self {
        Self {
            users: [400, 250],
            items: [300, 200],
            exponent: 2.0,
            min_degree: 2,
            max_degree: 60,
            topics: 8,
            shared_topics: 4,
            noise: 0.3,
            selectivity: 1.5,
            words_per_topic: 12,
            filler_words: 40,
            review_len: (6, 10),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.shared_topics > self.topics || self.topics == 0 {
            return bad(format!("{} shared of {} topics", self.shared_topics, self.topics));
        }
        if self.min_degree == 0 || self.min_degree > self.max_degree {
            return bad(format!("degree range [{}, {}]", self.min_degree, self.max_degree));
        }
        if self.users.iter().any(|&u| (u as u32) < self.min_degree) || self.items.contains(&0) {
            return bad("every domain needs items and at least min_degree users".into());
        }
        if !(self.exponent > 1.0) || !(self.noise >= 0.0) || self.words_per_topic == 0 {
            return bad("exponent must exceed 1, noise must be >= 0, topics need words".into());
        }
        if self.review_len.0 == 0 || self.review_len.0 > self.review_len.1 {
            return bad(format!("review length range {:?}", self.review_len));
        }
        Ok(())
    }

    /// Upper end of the degree range after capping by the user count.
    pub fn degree_cap(&self, domain: Domain) -> u32 {
        self.max_degree.min(self.users[domain.index()] as u32)
    }
}

/// `P(D <= d)` of the truncated discrete power law.
pub fn power_law_cdf(d: u32, exponent: f64, lo: u32, hi: u32) -> f64 {
    if d < lo {
        return 0.0;
    }
    let mass = |k: u32| (k as f64).powf(-exponent);
    let total: f64 = (lo..=hi).map(mass).sum();
    (lo..=d.min(hi)).map(mass).sum::<f64>() / total
}

fn sample_degree(cdf: &[f64], lo: u32, rng: &mut Rng) -> u32 {
    let u: f64 = rng.random();
    let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
    lo + k as u32
}

fn topic_word(domain: Domain, shared: usize, topic: usize, word: usize) -> String {
    if topic < shared {
        format!("t{topic}w{word}")
    } else {
        format!("{}t{topic}w{word}", domain_tag(domain))
    }
}

fn domain_tag(domain: Domain) -> &'static str {
    match domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    }
}

fn generate_domain(spec: &SyntheticSpec, domain: Domain, rng: &mut Rng) -> DomainDataset {
    let n_users = spec.users[domain.index()];
    let n_items = spec.items[domain.index()];
    let k = spec.topics;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let prefs: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..k).map(|_| normal.sample(rng)).collect())
        .collect();
    let (lo, hi) = (spec.min_degree, spec.degree_cap(domain));
    let cdf: Vec<f64> = (lo..=hi).map(|d| power_law_cdf(d, spec.exponent, lo, hi)).collect();
    let mut interactions = Vec::new();
    for item in 0..n_items {
        let primary = rng.random_range(0..k);
        let secondary = rng.random_range(0..k);
        let mut topic = vec![0.0; k];
        topic[primary] += 1.0;
        topic[secondary] += 0.3;
        let degree = sample_degree(&cdf, lo, rng) as usize;
        let affinity: Vec<f64> = prefs
            .iter()
            .map(|p| p.iter().zip(&topic).map(|(a, b)| a * b).sum())
            .collect();
        let chosen = index::sample_weighted(rng, n_users, |u| (spec.selectivity * affinity[u]).exp(), degree)
            .expect("finite positive weights");
        let mut users: Vec<usize> = chosen.into_vec();
        users.sort_unstable();
        for user in users {
            let a = affinity[user] + spec.noise * normal.sample(rng);
            let rating = match a {
                a if a > 0.8 => 5,
                a if a > 0.2 => 4,
                a if a > -0.3 => 3,
                a if a > -0.8 => 2,
                _ => 1,
            };
            let len = rng.random_range(spec.review_len.0..=spec.review_len.1);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let r: f64 = rng.random();
                    if r < 0.6 {
                        let t = if rng.random_bool(0.75) { primary } else { secondary };
                        topic_word(domain, spec.shared_topics, t, rng.random_range(0..spec.words_per_topic))
                    } else if r < 0.75 {
                        let pool = if rating >= 4 { &POSITIVE_WORDS } else { &NEGATIVE_WORDS };
                        pool[rng.random_range(0..pool.len())].to_string()
                    } else {
                        format!("{}f{}", domain_tag(domain), rng.random_range(0..spec.filler_words.max(1)))
                    }
                })
                .collect();
            interactions.push((user, item, rating, words.join(" ")));
        }
    }
    // Interactions were produced item by item; shuffle so ids are not
    // interned in popularity order.
    let order = index::sample(rng, interactions.len(), interactions.len()).into_vec();
    let mut users = Interner::default();
    let mut items = Interner::default();
    let mut out = Vec::with_capacity(order.len());
    for k in order {
        let (u, i, rating, review) = &interactions[k];
        out.push(Interaction {
            user: users.intern(&format!("{}u{u}", domain_tag(domain))),
            item: items.intern(&format!("{}i{i}", domain_tag(domain))),
            rating: *rating,
            review: review.clone(),
            domain,
        });
    }
    DomainDataset::new(domain, users, items, out)
}

/// Source and target datasets drawn from `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let source = generate_domain(spec, Domain::Source, &mut rng);
    let target = generate_domain(spec, Domain::Target, &mut rng);
    Ok((source, target))
}

/// Every token the generator can emit for `spec`.
pub fn vocabulary(spec: &SyntheticSpec) -> Vec<String> {
    let mut words: Vec<String> = POSITIVE_WORDS.iter().chain(&NEGATIVE_WORDS).map(|w| w.to_string()).collect();
    for domain in [Domain::Source, Domain::Target] {
        for t in 0..spec.topics {
            if t < spec.shared_topics && domain == Domain::Target {
                continue;
            }
            for w in 0..spec.words_per_topic {
                words.push(topic_word(domain, spec.shared_topics, t, w));
            }
        }
        for f in 0..spec.filler_words.max(1) {
            words.push(format!("{}f{f}", domain_tag(domain)));
        }
    }
    words
}

/// A generated pair, split and ready to train on: the target is split
/// 80/10/10, the source is used whole for training.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: SyntheticSpec,
    pub source: DomainCorpus,
    pub target: DomainCorpus,
    pub table: EmbeddingTable,
}

impl Benchmark {
    pub fn build(spec: &SyntheticSpec, embed_dim: usize) -> Result<Self> {
        let (source, target) = generate_synthetic(spec)?;
        let table = EmbeddingTable::synthetic(&vocabulary(spec), embed_dim, spec.seed ^ 0xe_b3dd);
        let split = split_dataset(&target, &SplitSpec::with_seed(spec.seed))?;
        Ok(Self {
            spec: spec.clone(),
            source: DomainCorpus::train_only(source, &table)?,
            target: DomainCorpus::new(Domain::Target, split, &table)?,
            table,
        })
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            source: &self.source,
            target: &self.target,
            table: &self.table,
        }
    }
}
