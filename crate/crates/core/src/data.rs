//! Review ingestion, document aggregation, splitting and negative sampling.
//!
//! Input files hold one JSON object per line. Identifiers are interned to
//! dense integer ids in first-seen order; split partitions share the id
//! space of the dataset they came from, so a user keeps the same id in
//! train, validation and test.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use crate::error::{Error, Result};

/// The random generator used for every seeded operation in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ratings at or above this value count as positive feedback.
pub const POSITIVE_RATING: u8 = 4;

/// Negatives are preferably drawn among items rated at or below this value.
pub const NEGATIVE_RATING: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// 1 to 5.
    pub rating: u8,
    pub review: String,
    pub domain: Domain,
}

impl Interaction {
    pub fn is_positive(&self) -> bool {
        self.rating >= POSITIVE_RATING
    }
}

/// String id to dense integer id, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Key names of the line-delimited review records.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordKeys {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub text: String,
}

impl Default for RecordKeys {
    fn default() -> Self {
        Self {
            user: "reviewerID".into(),
            item: "asin".into(),
            rating: "overall".into(),
            text: "reviewText".into(),
        }
    }
}

/// Interactions of one domain together with degree tables.
///
/// Degrees always describe a training partition: for a freshly loaded
/// dataset they count its own interactions, for the partitions returned by
/// [`split_dataset`] they count the training partition.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub domain: Domain,
    pub users: Interner,
    pub items: Interner,
    pub interactions: Vec<Interaction>,
    user_degree: Vec<u32>,
    item_degree: Vec<u32>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
    /// Malformed input lines skipped while loading.
    pub skipped: usize,
}

impl DomainDataset {
    /// Builds a dataset whose degree tables count `interactions`.
    pub fn new(
        domain: Domain,
        users: Interner,
        items: Interner,
        interactions: Vec<Interaction>,
    ) -> Self {
        let mut ds = Self {
            domain,
            users,
            items,
            interactions,
            user_degree: Vec::new(),
            item_degree: Vec::new(),
            by_user: Vec::new(),
            by_item: Vec::new(),
            skipped: 0,
        };
        ds.reindex();
        let (u, i) = count_degrees(&ds.interactions, ds.n_users(), ds.n_items());
        ds.user_degree = u;
        ds.item_degree = i;
        ds
    }

    fn reindex(&mut self) {
        self.by_user = vec![Vec::new(); self.users.len()];
        self.by_item = vec![Vec::new(); self.items.len()];
        for (k, it) in self.interactions.iter().enumerate() {
            self.by_user[it.user].push(k);
            self.by_item[it.item].push(k);
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn user_degree(&self, user: usize) -> u32 {
        self.user_degree.get(user).copied().unwrap_or(0)
    }

    pub fn item_degree(&self, item: usize) -> u32 {
        self.item_degree.get(item).copied().unwrap_or(0)
    }

    pub fn user_degrees(&self) -> &[u32] {
        &self.user_degree
    }

    pub fn item_degrees(&self) -> &[u32] {
        &self.item_degree
    }

    pub fn max_user_degree(&self) -> u32 {
        self.user_degree.iter().copied().max().unwrap_or(0)
    }

    pub fn max_item_degree(&self) -> u32 {
        self.item_degree.iter().copied().max().unwrap_or(0)
    }

    /// Indices into `interactions` made by `user`.
    pub fn user_interactions(&self, user: usize) -> &[usize] {
        self.by_user.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn item_interactions(&self, item: usize) -> &[usize] {
        self.by_item.get(item).map_or(&[], Vec::as_slice)
    }

    /// Indices of interactions with a positive rating.
    pub fn positives(&self) -> Vec<usize> {
        (0..self.interactions.len())
            .filter(|&k| self.interactions[k].is_positive())
            .collect()
    }

    /// Replaces the degree tables by counts over `train`, which must share
    /// this dataset's id space (or a prefix of it).
    pub fn with_degrees_from(mut self, train: &DomainDataset) -> Self {
        self.user_degree = (0..self.n_users()).map(|u| train.user_degree(u)).collect();
        self.item_degree = (0..self.n_items()).map(|i| train.item_degree(i)).collect();
        self
    }

    /// Grows the interners to cover `other` without renumbering.
    pub fn adopt_ids(&mut self, users: &Interner, items: &Interner) {
        for n in users.names() {
            self.users.intern(n);
        }
        for n in items.names() {
            self.items.intern(n);
        }
        self.reindex();
        self.user_degree.resize(self.users.len(), 0);
        self.item_degree.resize(self.items.len(), 0);
    }
}

fn count_degrees(interactions: &[Interaction], n_users: usize, n_items: usize) -> (Vec<u32>, Vec<u32>) {
    let mut u = vec![0u32; n_users];
    let mut i = vec![0u32; n_items];
    for it in interactions {
        u[it.user] += 1;
        i[it.item] += 1;
    }
    (u, i)
}

fn parse_rating(value: &serde_json::Value) -> Option<u8> {
    let r = match value {
        serde_json::Value::Number(n) => n.as_f64()?,
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    if r.fract() != 0.0 || !(1.0..=5.0).contains(&r) {
        return None;
    }
    Some(r as u8)
}

fn parse_id(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses one record; `None` marks a malformed line.
fn parse_record(line: &str, keys: &RecordKeys) -> Option<(String, String, u8, String)> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let user = parse_id(obj.get(&keys.user)?)?;
    let item = parse_id(obj.get(&keys.item)?)?;
    let rating = parse_rating(obj.get(&keys.rating)?)?;
    let text = obj.get(&keys.text)?.as_str()?.to_owned();
    Some((user, item, rating, text))
}

/// Loads a line-delimited review file with fresh id spaces.
pub fn load_reviews(path: &Path, domain: Domain, keys: &RecordKeys) -> Result<DomainDataset> {
    load_reviews_with_ids(path, domain, keys, Interner::default(), Interner::default())
}

/// Loads a review file, continuing the given id spaces.
pub fn load_reviews_with_ids(
    path: &Path,
    domain: Domain,
    keys: &RecordKeys,
    users: Interner,
    items: Interner,
) -> Result<DomainDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ds = read_reviews(BufReader::new(file), domain, keys, users, items)
        .map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
    if ds.interactions.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} contains no valid review records ({} malformed)",
            path.display(),
            ds.skipped
        )));
    }
    if ds.skipped > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), ds.skipped);
    }
    Ok(ds)
}

/// Parses records from any reader. Blank lines are ignored; malformed ones
/// are counted in [`DomainDataset::skipped`].
pub fn read_reviews(
    reader: impl BufRead,
    domain: Domain,
    keys: &RecordKeys,
    mut users: Interner,
    mut items: Interner,
) -> Result<DomainDataset> {
    let mut interactions = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, keys) {
            Some((u, i, rating, review)) => interactions.push(Interaction {
                user: users.intern(&u),
                item: items.intern(&i),
                rating,
                review,
                domain,
            }),
            None => skipped += 1,
        }
    }
    let mut ds = DomainDataset::new(domain, users, items, interactions);
    ds.skipped = skipped;
    Ok(ds)
}

/// Writes interactions back in the keyed line format, in stored order.
pub fn write_reviews(path: &Path, dataset: &DomainDataset, keys: &RecordKeys) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in &dataset.interactions {
        let mut obj = serde_json::Map::new();
        obj.insert(keys.user.clone(), dataset.users.name(it.user).into());
        obj.insert(keys.item.clone(), dataset.items.name(it.item).into());
        obj.insert(keys.rating.clone(), serde_json::Value::from(it.rating as f64));
        obj.insert(keys.text.clone(), it.review.clone().into());
        writeln!(w, "{}", serde_json::Value::Object(obj)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Concatenated review tokens of `user` and of `item`, in interaction order,
/// leaving out every review of the `exclude` pair.
pub fn aggregate_documents(
    dataset: &DomainDataset,
    user: usize,
    item: usize,
    exclude: Option<(usize, usize)>,
) -> Result<(Vec<String>, Vec<String>)> {
    if user >= dataset.n_users() || item >= dataset.n_items() {
        return Err(Error::Usage(format!(
            "user {user} or item {item} not in the {} dataset",
            dataset.domain
        )));
    }
    let collect = |indices: &[usize]| {
        let mut out = Vec::new();
        for &k in indices {
            let it = &dataset.interactions[k];
            if exclude == Some((it.user, it.item)) {
                continue;
            }
            out.extend(tokenize(&it.review));
        }
        out
    };
    Ok((
        collect(dataset.user_interactions(user)),
        collect(dataset.item_interactions(item)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Usage(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: DomainDataset,
    pub valid: DomainDataset,
    pub test: DomainDataset,
}

/// Seeded shuffle followed by an 80/10/10 style partition. All three parts
/// keep the full id space and carry the training-partition degrees.
pub fn split_dataset(dataset: &DomainDataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = dataset.interactions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(spec.seed));
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_valid = ((n as f64 * spec.valid).round() as usize).min(n - n_train);
    let part = |range: &[usize]| {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        let inter = idx.iter().map(|&k| dataset.interactions[k].clone()).collect();
        DomainDataset::new(
            dataset.domain,
            dataset.users.clone(),
            dataset.items.clone(),
            inter,
        )
    };
    let train = part(&order[..n_train]);
    let valid = part(&order[n_train..n_train + n_valid]).with_degrees_from(&train);
    let test = part(&order[n_train + n_valid..]).with_degrees_from(&train);
    Ok(Split { train, valid, test })
}

/// Reloads partitions written by [`write_reviews`]. Ids are interned in
/// train, valid, test order and every part ends up with the full id space
/// and training degrees.
pub fn load_split(paths: [&Path; 3], domain: Domain, keys: &RecordKeys) -> Result<Split> {
    let mut train = load_reviews(paths[0], domain, keys)?;
    let load_tail = |path: &Path, users: &Interner, items: &Interner| -> Result<DomainDataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_reviews(BufReader::new(file), domain, keys, users.clone(), items.clone())
    };
    let mut valid = load_tail(paths[1], &train.users, &train.items)?;
    let mut test = load_tail(paths[2], &valid.users, &valid.items)?;
    let (users, items) = (test.users.clone(), test.items.clone());
    train.adopt_ids(&users, &items);
    valid.adopt_ids(&users, &items);
    test.adopt_ids(&users, &items);
    let valid = valid.with_degrees_from(&train);
    let test = test.with_degrees_from(&train);
    Ok(Split { train, valid, test })
}

/// Draws a negative item for `user`, never returning `positive`.
///
/// Items the user rated 3 or lower are preferred; if there are none, an item
/// the user never interacted with is drawn uniformly.
pub fn sample_negative(
    dataset: &DomainDataset,
    user: usize,
    positive: usize,
    rng: &mut Rng,
) -> Result<usize> {
    let mine = dataset.user_interactions(user);
    let low: Vec<usize> = mine
        .iter()
        .map(|&k| &dataset.interactions[k])
        .filter(|it| it.rating <= NEGATIVE_RATING && it.item != positive)
        .map(|it| it.item)
        .collect();
    if !low.is_empty() {
        return Ok(low[rng.random_range(0..low.len())]);
    }
    let n_items = dataset.n_items();
    let touched = |item: usize| {
        item == positive || mine.iter().any(|&k| dataset.interactions[k].item == item)
    };
    // Rejection sampling is exact and O(1) expected for sparse users.
    for _ in 0..64 {
        let cand = rng.random_range(0..n_items);
        if !touched(cand) {
            return Ok(cand);
        }
    }
    let free: Vec<usize> = (0..n_items).filter(|&i| !touched(i)).collect();
    if free.is_empty() {
        return Err(Error::SamplingExhausted { user });
    }
    Ok(free[rng.random_range(0..free.len())])
}
