//! Junk-data generators (random strings, word-shuffled documents) and ratio-based
//! injection into a pool.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Pool, Source, TokenCounter};
use crate::rng;

pub const VOCAB_SIZE: usize = 10_000;
pub const MIN_WORD_LEN: usize = 3;
pub const MAX_WORD_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum InjectionError {
    #[error("junk source exhausted at ratio {achieved:.6}, needed {target}")]
    Exhausted { achieved: f64, target: f64 },
    #[error("junk document `{0}` is already in the pool")]
    NotDisjoint(String),
    #[error("injection ratio must be positive, got {0}")]
    InvalidRatio(f64),
    #[error("document must have at least one word")]
    ZeroWords,
    #[error("cannot match junk lengths to a pool with no words")]
    NoLengths,
    #[error("unknown junk kind `{0}` (expected `random` or `shuffled`)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JunkVocab {
    pub words: Vec<String>,
    pub seed: u64,
}

/// Draws 10,000 distinct words of 3–8 uniform lowercase letters.
pub fn build_vocab(seed: u64) -> JunkVocab {
    let mut rng = rng::seeded(seed);
    let mut seen = HashSet::with_capacity(VOCAB_SIZE);
    let mut words = Vec::with_capacity(VOCAB_SIZE);
    while words.len() < VOCAB_SIZE {
        let len = rng.random_range(MIN_WORD_LEN..=MAX_WORD_LEN);
        let word: String = (0..len)
            .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
            .collect();
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    JunkVocab { words, seed }
}

pub fn gen_random_document(
    vocab: &JunkVocab,
    n_words: usize,
    seed: u64,
    id: impl Into<String>,
    counter: &dyn TokenCounter,
) -> Result<Document, InjectionError> {
    if n_words == 0 {
        return Err(InjectionError::ZeroWords);
    }
    let id = id.into();
    let mut rng = rng::keyed(seed, &id);
    let words: Vec<&str> = (0..n_words)
        .map(|_| vocab.words.choose(&mut rng).expect("vocab is non-empty").as_str())
        .collect();
    Ok(Document::new(id, words.join(" "), Source::RandomJunk, counter))
}

/// Shuffles a document's whitespace-separated words with a stream keyed by
/// `(seed, doc.id)` and rejoins them with single spaces.
pub fn shuffle_document(doc: &Document, seed: u64, counter: &dyn TokenCounter) -> Document {
    let mut words: Vec<&str> = doc.text.split_whitespace().collect();
    words.shuffle(&mut rng::keyed(seed, &doc.id));
    Document::new(doc.id.clone(), words.join(" "), Source::ShuffledJunk, counter)
}

/// Endless stream of random-string documents whose word counts are resampled
/// from a pool's document lengths.
pub struct RandomJunkStream<'a> {
    vocab: &'a JunkVocab,
    lengths: Vec<usize>,
    seed: u64,
    next: u64,
    counter: &'a dyn TokenCounter,
}

impl<'a> RandomJunkStream<'a> {
    pub fn matching(
        vocab: &'a JunkVocab,
        pool: &Pool,
        seed: u64,
        counter: &'a dyn TokenCounter,
    ) -> Result<Self, InjectionError> {
        let lengths: Vec<usize> = pool
            .documents
            .iter()
            .map(|d| d.text.split_whitespace().count())
            .filter(|&n| n > 0)
            .collect();
        if lengths.is_empty() {
            return Err(InjectionError::NoLengths);
        }
        Ok(RandomJunkStream {
            vocab,
            lengths,
            seed,
            next: 0,
            counter,
        })
    }
}

impl Iterator for RandomJunkStream<'_> {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        let i = self.next;
        self.next += 1;
        let n_words = *self
            .lengths
            .choose(&mut rng::indexed(self.seed, i))
            .expect("non-empty lengths");
        let doc = gen_random_document(
            self.vocab,
            n_words,
            self.seed,
            format!("random-{}-{i:08}", self.seed),
            self.counter,
        )
        .expect("n_words > 0");
        Some(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunkKind {
    RandomStrings,
    ShuffledDocs,
}

impl JunkKind {
    fn short(self) -> &'static str {
        match self {
            JunkKind::RandomStrings => "random",
            JunkKind::ShuffledDocs => "shuffled",
        }
    }
}

impl fmt::Display for JunkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for JunkKind {
    type Err = InjectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" | "random_strings" => Ok(JunkKind::RandomStrings),
            "shuffled" | "shuffled_docs" => Ok(JunkKind::ShuffledDocs),
            other => Err(InjectionError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: JunkKind,
    /// Junk tokens per pool token.
    pub ratio: f64,
    pub seed: u64,
}

impl InjectionSpec {
    /// Label suffix such as `+200% shuffled`.
    pub fn label(&self) -> String {
        let pct = self.ratio * 100.0;
        let pct = if (pct - pct.round()).abs() < 1e-9 {
            format!("{:.0}", pct.round())
        } else {
            pct.to_string()
        };
        format!("+{pct}% {}", self.kind)
    }
}

/// Smallest junk token count satisfying `junk >= ratio * pool_tokens`, at least 1.
pub fn junk_token_target(pool_tokens: u64, ratio: f64) -> u64 {
    ((ratio * pool_tokens as f64 - 1e-9).ceil().max(1.0)) as u64
}

/// Appends whole junk documents until the junk token budget is met, then
/// shuffles the combined pool under `spec.seed`.
pub fn inject(
    pool: &Pool,
    spec: &InjectionSpec,
    junk_source: impl IntoIterator<Item = Document>,
) -> Result<Pool, InjectionError> {
    if !(spec.ratio > 0.0 && spec.ratio.is_finite()) {
        return Err(InjectionError::InvalidRatio(spec.ratio));
    }
    let mut ids: HashSet<String> = pool.documents.iter().map(|d| d.id.clone()).collect();
    let target = junk_token_target(pool.total_tokens, spec.ratio);

    let mut junk = Vec::new();
    let mut junk_tokens = 0u64;
    for doc in junk_source {
        if junk_tokens >= target {
            break;
        }
        if !ids.insert(doc.id.clone()) {
            return Err(InjectionError::NotDisjoint(doc.id));
        }
        junk_tokens += doc.token_count;
        junk.push(doc);
    }
    if junk_tokens < target {
        let achieved = if pool.total_tokens == 0 {
            0.0
        } else {
            junk_tokens as f64 / pool.total_tokens as f64
        };
        return Err(InjectionError::Exhausted {
            achieved,
            target: spec.ratio,
        });
    }

    let mut docs: Vec<Document> = pool.documents.clone();
    docs.extend(junk);
    docs.shuffle(&mut rng::seeded(spec.seed));
    Ok(Pool::from_documents(
        docs,
        spec.seed,
        format!("{}{}", pool.label, spec.label()),
    ))
}
