//! Documents, token counting and seeded pool sampling.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("stream exhausted after {achieved} tokens, target was {target}")]
    StreamExhausted { achieved: u64, target: u64 },
    #[error("target token count must be positive")]
    ZeroTarget,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("unknown document source `{0}`")]
    UnknownSource(String),
    #[error("unknown token counter `{0}`")]
    UnknownCounter(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("pool header mismatch: {0}")]
    HeaderMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Pool,
    RandomJunk,
    ShuffledJunk,
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Pool => "pool",
            Source::RandomJunk => "random_junk",
            Source::ShuffledJunk => "shuffled_junk",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pool" => Ok(Source::Pool),
            "random_junk" => Ok(Source::RandomJunk),
            "shuffled_junk" => Ok(Source::ShuffledJunk),
            "other" => Ok(Source::Other),
            other => Err(CorpusError::UnknownSource(other.to_string())),
        }
    }
}

/// Turns text into a token count.
///
/// Implementations must be deterministic and return 0 for the empty string.
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> u64;
}

/// Counts maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

/// Rough subword approximation: one token per four bytes, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct BytesPerTokenCounter;

impl TokenCounter for BytesPerTokenCounter {
    fn name(&self) -> &str {
        "bytes4"
    }

    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// Looks up a built-in counter by name.
pub fn counter_by_name(name: &str) -> Result<Box<dyn TokenCounter>, CorpusError> {
    match name {
        "whitespace" => Ok(Box::new(WhitespaceCounter)),
        "bytes4" => Ok(Box::new(BytesPerTokenCounter)),
        other => Err(CorpusError::UnknownCounter(other.to_string())),
    }
}

pub fn count_tokens(counter: &dyn TokenCounter, text: &str) -> u64 {
    counter.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    source: Source,
    pub token_count: u64,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: Source,
        counter: &dyn TokenCounter,
    ) -> Self {
        let text = text.into();
        let token_count = counter.count(&text);
        Document {
            id: id.into(),
            text,
            source,
            token_count,
        }
    }

    pub fn source(&self) -> Source {
        self.source
    }
}

/// On-disk shape of one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    Source::Pool.as_str().to_string()
}

impl DocumentRecord {
    pub fn into_document(self, counter: &dyn TokenCounter) -> Result<Document, CorpusError> {
        let source = self.source.parse()?;
        Ok(Document::new(self.id, self.text, source, counter))
    }
}

impl From<&Document> for DocumentRecord {
    fn from(doc: &Document) -> Self {
        DocumentRecord {
            id: doc.id.clone(),
            text: doc.text.clone(),
            source: doc.source.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    pub documents: Vec<Document>,
    pub total_tokens: u64,
    pub seed: u64,
    pub label: String,
}

impl Pool {
    /// Builds a pool from documents in the given order, recomputing the token total.
    pub fn from_documents(documents: Vec<Document>, seed: u64, label: impl Into<String>) -> Self {
        let total_tokens = documents.iter().map(|d| d.token_count).sum();
        Pool {
            documents,
            total_tokens,
            seed,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Sidecar header written next to a pool's JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub label: String,
    pub seed: u64,
    pub total_tokens: u64,
    pub counter_name: String,
}

/// Draws whole documents in seeded shuffled order until `target_tokens` is reached.
pub fn sample_pool(
    stream: impl IntoIterator<Item = Document>,
    target_tokens: u64,
    seed: u64,
    label: impl Into<String>,
) -> Result<Pool, CorpusError> {
    if target_tokens == 0 {
        return Err(CorpusError::ZeroTarget);
    }
    let mut docs: Vec<Option<Document>> = stream.into_iter().map(Some).collect();
    let mut seen = HashSet::with_capacity(docs.len());
    for doc in docs.iter().flatten() {
        if !seen.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateId(doc.id.clone()));
        }
    }
    drop(seen);

    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng::seeded(seed));

    let mut picked = Vec::new();
    let mut total = 0u64;
    for idx in order {
        if total >= target_tokens {
            break;
        }
        let doc = docs[idx].take().expect("index visited once");
        total += doc.token_count;
        picked.push(doc);
    }
    if total < target_tokens {
        return Err(CorpusError::StreamExhausted {
            achieved: total,
            target: target_tokens,
        });
    }
    Ok(Pool {
        documents: picked,
        total_tokens: total,
        seed,
        label: label.into(),
    })
}

pub fn read_documents(
    path: &Path,
    counter: &dyn TokenCounter,
) -> Result<Vec<Document>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let doc = record
            .into_document(counter)
            .map_err(|e| malformed(e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_documents<'a>(
    path: &Path,
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut out, &DocumentRecord::from(doc))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Path of the sidecar header for a pool stored at `path`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".header.json");
    PathBuf::from(name)
}

pub fn write_pool(path: &Path, pool: &Pool, counter: &dyn TokenCounter) -> Result<(), CorpusError> {
    write_documents(path, &pool.documents)?;
    let header = PoolHeader {
        label: pool.label.clone(),
        seed: pool.seed,
        total_tokens: pool.total_tokens,
        counter_name: counter.name().to_string(),
    };
    let mut out = BufWriter::new(File::create(header_path(path))?);
    serde_json::to_writer_pretty(&mut out, &header)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a pool and its sidecar header. Without a header the pool is labelled by
/// file stem with seed 0.
pub fn read_pool(path: &Path, counter: &dyn TokenCounter) -> Result<Pool, CorpusError> {
    let docs = read_documents(path, counter)?;
    let hpath = header_path(path);
    let (label, seed) = if hpath.exists() {
        let header: PoolHeader = serde_json::from_reader(BufReader::new(File::open(&hpath)?))?;
        if header.counter_name != counter.name() {
            return Err(CorpusError::HeaderMismatch(format!(
                "pool was counted with `{}`, active counter is `{}`",
                header.counter_name,
                counter.name()
            )));
        }
        (header.label, header.seed)
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        (stem, 0)
    };
    let pool = Pool::from_documents(docs, seed, label);
    Ok(pool)
}
