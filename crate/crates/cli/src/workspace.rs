//! Layout of a prepared directory and loading it back.
//!
//! ```text
//! source.jsonl                      whole source domain (training only)
//! target.{train,valid,test}.jsonl   target partitions
//! degrees.<domain>.{users,items}.csv
//! vocab.txt                         token and count over training reviews
//! manifest.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use head::corpus::DomainCorpus;
use head::data::{load_reviews, load_split, tokenize, write_reviews, Domain, DomainDataset, RecordKeys, Split};
use head::embedding::{load_table, EmbeddingGeometry, EmbeddingTable};
use head::training::TrainData;
use head::{Error, Result};

use crate::manifest::io_error;

pub const SOURCE: &str = "source.jsonl";
pub const TARGET: [&str; 3] = ["target.train.jsonl", "target.valid.jsonl", "target.test.jsonl"];
pub const VOCAB: &str = "vocab.txt";

/// Salt separating the synthetic table stream from the training stream.
pub const TABLE_SALT: u64 = 0xe_b3dd;

pub fn data_files(dir: &Path) -> Vec<PathBuf> {
    std::iter::once(SOURCE).chain(TARGET).map(|f| dir.join(f)).collect()
}

fn degree_csv(names: &[String], degrees: &[u32]) -> String {
    let mut out = String::from("id,degree\n");
    for (n, d) in names.iter().zip(degrees) {
        out.push_str(&format!("{n},{d}\n"));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes partitions, degree tables and vocabulary; returns the file names.
pub fn write_prepared(dir: &Path, source: &DomainDataset, target: &Split) -> Result<Vec<String>> {
    let keys = RecordKeys::default();
    let mut files = Vec::new();
    write_reviews(&dir.join(SOURCE), source, &keys)?;
    files.push(SOURCE.to_string());
    for (name, part) in TARGET.iter().zip([&target.train, &target.valid, &target.test]) {
        write_reviews(&dir.join(name), part, &keys)?;
        files.push(name.to_string());
    }
    for (domain, ds) in [(Domain::Source, source), (Domain::Target, &target.train)] {
        for (kind, names, degrees) in [
            ("users", ds.users.names(), ds.user_degrees()),
            ("items", ds.items.names(), ds.item_degrees()),
        ] {
            let name = format!("degrees.{domain}.{kind}.csv");
            write(&dir.join(&name), &degree_csv(names, degrees))?;
            files.push(name);
        }
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for it in source.interactions.iter().chain(&target.train.interactions) {
        for t in tokenize(&it.review) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let vocab: String = counts.iter().map(|(t, c)| format!("{t} {c}\n")).collect();
    write(&dir.join(VOCAB), &vocab)?;
    files.push(VOCAB.to_string());
    Ok(files)
}

pub fn read_vocab(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(VOCAB);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split_whitespace().next().map(str::to_owned).ok_or_else(|| Error::Format {
                path: path.clone(),
                line: n + 1,
                message: "empty vocabulary entry".into(),
            })
        })
        .collect()
}

/// Where word vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Seeded Gaussian rows over the prepared vocabulary.
    Synthetic { dim: usize, seed: u64 },
    File { path: PathBuf, geometry: EmbeddingGeometry },
}

impl EmbeddingSource {
    pub fn table(&self, dir: &Path) -> Result<EmbeddingTable> {
        match self {
            EmbeddingSource::Synthetic { dim, seed } => Ok(EmbeddingTable::synthetic(&read_vocab(dir)?, *dim, *seed)),
            EmbeddingSource::File { path, geometry } => load_table(path, *geometry),
        }
    }

    /// Checkpoint metadata describing this source.
    pub fn meta(&self) -> Vec<(String, String)> {
        match self {
            EmbeddingSource::Synthetic { dim, seed } => vec![
                ("embedding".into(), "synthetic".into()),
                ("embed_dim".into(), dim.to_string()),
                ("embed_seed".into(), seed.to_string()),
            ],
            EmbeddingSource::File { path, geometry } => vec![
                ("embedding".into(), path.display().to_string()),
                ("embedding_geometry".into(), geometry_name(*geometry).into()),
            ],
        }
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let missing = |k: &str| Error::Config(format!("checkpoint metadata lacks {k}"));
        match get("embedding").ok_or_else(|| missing("embedding"))? {
            "synthetic" => {
                let num = |k: &str| -> Result<u64> {
                    get(k)
                        .ok_or_else(|| missing(k))?
                        .parse()
                        .map_err(|_| Error::Config(format!("bad {k} in checkpoint metadata")))
                };
                Ok(EmbeddingSource::Synthetic {
                    dim: num("embed_dim")? as usize,
                    seed: num("embed_seed")?,
                })
            }
            path => Ok(EmbeddingSource::File {
                path: PathBuf::from(path),
                geometry: parse_geometry(get("embedding_geometry").unwrap_or("euclidean"))?,
            }),
        }
    }
}

pub fn geometry_name(g: EmbeddingGeometry) -> &'static str {
    match g {
        EmbeddingGeometry::Euclidean => "euclidean",
        EmbeddingGeometry::Poincare => "poincare",
    }
}

pub fn parse_geometry(s: &str) -> Result<EmbeddingGeometry> {
    match s {
        "euclidean" => Ok(EmbeddingGeometry::Euclidean),
        "poincare" => Ok(EmbeddingGeometry::Poincare),
        other => Err(Error::Usage(format!("unknown embedding geometry {other:?}"))),
    }
}

/// A prepared directory loaded into training-ready corpora.
pub struct Loaded {
    pub source: DomainCorpus,
    pub target: DomainCorpus,
    pub table: EmbeddingTable,
}

impl Loaded {
    pub fn open(dir: &Path, embedding: &EmbeddingSource) -> Result<Self> {
        let keys = RecordKeys::default();
        let table = embedding.table(dir)?;
        let source = load_reviews(&dir.join(SOURCE), Domain::Source, &keys)?;
        let t = TARGET.map(|f| dir.join(f));
        let split = load_split([&t[0], &t[1], &t[2]], Domain::Target, &keys)?;
        Ok(Self {
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
