//! Training-ready view of one domain: partitions, pre-tokenised reviews,
//! document assembly and evaluation candidate lists.

use rand::seq::index;

use crate::data::{DomainDataset, Domain, Rng, Split};
use crate::embedding::{embed_ids, DocumentEmbedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::objectives::degree_weight;

#[derive(Debug, Clone)]
pub struct DomainCorpus {
    pub domain: Domain,
    pub train: DomainDataset,
    pub valid: DomainDataset,
    pub test: DomainDataset,
    /// Table rows of each training review, parallel to `train.interactions`.
    review_rows: Vec<Vec<usize>>,
    positives: Vec<usize>,
    /// Per user, sorted items touched in any partition.
    seen: Vec<Vec<usize>>,
}

impl DomainCorpus {
    pub fn new(domain: Domain, split: Split, table: &EmbeddingTable) -> Result<Self> {
        let Split { train, valid, test } = split;
        if train.is_empty() {
            return Err(Error::EmptyDataset(format!("{domain} training partition")));
        }
        let review_rows = train
            .interactions
            .iter()
            .map(|it| crate::data::tokenize(&it.review).iter().map(|t| table.lookup(t)).collect())
            .collect();
        let positives = train.positives();
        let mut seen = vec![Vec::new(); train.n_users()];
        for part in [&train, &valid, &test] {
            for it in &part.interactions {
                seen[it.user].push(it.item);
            }
        }
        for s in &mut seen {
            s.sort_unstable();
            s.dedup();
        }
        Ok(Self {
            domain,
            train,
            valid,
            test,
            review_rows,
            positives,
            seen,
        })
    }

    /// A corpus whose whole dataset is used for training.
    pub fn train_only(dataset: DomainDataset, table: &EmbeddingTable) -> Result<Self> {
        let empty = |d: &DomainDataset| {
            DomainDataset::new(d.domain, d.users.clone(), d.items.clone(), Vec::new()).with_degrees_from(d)
        };
        let split = Split {
            valid: empty(&dataset),
            test: empty(&dataset),
            train: dataset,
        };
        Self::new(split.train.domain, split, table)
    }

    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    /// Training interactions with a positive rating.
    pub fn train_positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn user_weight(&self, user: usize, degree_norm: bool) -> f64 {
        if degree_norm {
            degree_weight(self.train.user_degree(user), self.train.max_user_degree())
        } else {
            1.0
        }
    }

    pub fn item_weight(&self, item: usize, degree_norm: bool) -> f64 {
        if degree_norm {
            degree_weight(self.train.item_degree(item), self.train.max_item_degree())
        } else {
            1.0
        }
    }

    pub fn has_interacted(&self, user: usize, item: usize) -> bool {
        self.seen.get(user).is_some_and(|s| s.binary_search(&item).is_ok())
    }

    fn rows(&self, interactions: &[usize], skip: impl Fn(usize) -> bool, cap: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &k in interactions {
            if out.len() >= cap {
                break;
            }
            if skip(k) {
                continue;
            }
            out.extend_from_slice(&self.review_rows[k]);
        }
        out.truncate(cap);
        out
    }

    /// The user's training reviews, minus those about `exclude_item`.
    pub fn user_doc(&self, user: usize, exclude_item: Option<usize>, table: &EmbeddingTable, cap: usize) -> DocumentEmbedding {
        let inter = &self.train.interactions;
        let rows = self.rows(
            self.train.user_interactions(user),
            |k| Some(inter[k].item) == exclude_item,
            cap,
        );
        embed_ids(&rows, table, cap)
    }

    /// The item's training reviews, minus those written by `exclude_user`.
    pub fn item_doc(&self, item: usize, exclude_user: Option<usize>, table: &EmbeddingTable, cap: usize) -> DocumentEmbedding {
        let inter = &self.train.interactions;
        let rows = self.rows(
            self.train.item_interactions(item),
            |k| Some(inter[k].user) == exclude_user,
            cap,
        );
        embed_ids(&rows, table, cap)
    }

    /// One candidate list per positive interaction of `part`: the held-out
    /// item followed by up to `negatives` items the user never touched.
    pub fn eval_lists(&self, part: &DomainDataset, negatives: usize, rng: &mut Rng) -> Vec<EvalList> {
        let n_items = self.n_items();
        let mut out = Vec::new();
        for it in part.interactions.iter().filter(|it| it.is_positive()) {
            let seen = &self.seen[it.user];
            let free = n_items - seen.len();
            let mut candidates = vec![it.item];
            if free <= negatives {
                candidates.extend((0..n_items).filter(|i| !self.has_interacted(it.user, *i)));
            } else {
                // Sample ranks among the untouched items, then map them to ids.
                let mut picks: Vec<usize> = index::sample(rng, free, negatives).into_vec();
                picks.sort_unstable();
                let mut seen_iter = seen.iter().peekable();
                let mut rank = 0;
                let mut pi = 0;
                for item in 0..n_items {
                    if seen_iter.peek() == Some(&&item) {
                        seen_iter.next();
                        continue;
                    }
                    if pi < picks.len() && picks[pi] == rank {
                        candidates.push(item);
                        pi += 1;
                    }
                    rank += 1;
                }
            }
            out.push(EvalList {
                user: it.user,
                positive: it.item,
                candidates,
            });
        }
        out
    }
}

/// Items to rank for one held-out interaction; `candidates[0]` is the
/// positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalList {
    pub user: usize,
    pub positive: usize,
    pub candidates: Vec<usize>,
}
