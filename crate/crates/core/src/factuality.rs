//! Keyword matching of corpus documents against question/answer items and
//! four-way classification of the matches by an external judge.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::rng;
use crate::text::alnum_words;

pub const JUDGE_API_KEY_ENV: &str = "JUDGE_API_KEY";
pub const PROMPT_TEMPLATE: &str = include_str!("../data/judge_prompt.txt");

#[derive(Debug, Error)]
pub enum FactualityError {
    #[error("invalid QA item `{id}`: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    /// Filled as `<subject>:<line>` when absent from the input.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    pub subject: String,
    pub question: String,
    pub answer: String,
    pub keywords: Vec<String>,
}

impl QAItem {
    pub fn validate(&self) -> Result<(), FactualityError> {
        let bad = |reason: &str| {
            Err(FactualityError::InvalidItem {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.keywords.is_empty() {
            return bad("keywords must be non-empty");
        }
        if self.keywords.iter().any(|k| alnum_words(k).is_empty()) {
            return bad("every keyword needs at least one alphanumeric word");
        }
        if self.keywords.iter().any(|k| *k != k.to_lowercase()) {
            return bad("keywords must be lowercase");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Support,
    Refute,
    Related,
    Unrelated,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [Verdict::Support, Verdict::Refute, Verdict::Related, Verdict::Unrelated];

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Support => "Support",
            Verdict::Refute => "Refute",
            Verdict::Related => "Related",
            Verdict::Unrelated => "Unrelated",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Verdict {
    type Err = ();

    /// Exact label after trimming surrounding whitespace.
    fn from_str(s: &str) -> Result<Self, ()> {
        let t = s.trim();
        Verdict::ALL.into_iter().find(|v| v.label() == t).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub doc_id: String,
    pub qa_id: String,
    pub verdict: Verdict,
    pub raw_response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The judge answered with something other than one of the four labels.
    Malformed,
    /// Every attempt failed in transport, or a non-retryable transport error.
    Transport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeFailure {
    pub doc_id: String,
    pub qa_id: String,
    pub kind: FailureKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Judged(Judgement),
    Failed(JudgeFailure),
}

impl JudgeOutcome {
    pub fn doc_id(&self) -> &str {
        match self {
            JudgeOutcome::Judged(j) => &j.doc_id,
            JudgeOutcome::Failed(f) => &f.doc_id,
        }
    }

    pub fn judgement(&self) -> Option<&Judgement> {
        match self {
            JudgeOutcome::Judged(j) => Some(j),
            JudgeOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct JudgeError {
    pub message: String,
    /// Worth retrying (timeouts, connection resets, 429 and 5xx responses).
    pub transient: bool,
}

impl JudgeError {
    pub fn transient(message: impl Into<String>) -> Self {
        JudgeError {
            message: message.into(),
            transient: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        JudgeError {
            message: message.into(),
            transient: false,
        }
    }
}

/// Classifier returning the judge's raw text answer.
pub trait Judge: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, doc: &Document, qa: &QAItem) -> Result<String, JudgeError>;
}

/// Documents whose text contains every keyword as a whole-word (or
/// whole-phrase) match, case-insensitively, in pool order.
pub fn keyword_match<'a>(docs: &'a [Document], qa: &QAItem) -> Vec<&'a Document> {
    let phrases: Vec<Vec<String>> = qa.keywords.iter().map(|k| alnum_words(k)).collect();
    docs.iter()
        .filter(|doc| {
            let words = alnum_words(&doc.text);
            phrases.iter().all(|p| contains_phrase(&words, p))
        })
        .collect()
}

fn contains_phrase(words: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && words.windows(phrase.len()).any(|w| w == phrase)
}

/// Fills the `{document}`, `{question}` and `{answer}` slots of a template.
/// Slot-like text inside the inserted values is left untouched.
pub fn render_prompt(template: &str, doc: &Document, qa: &QAItem) -> String {
    let slots = [("{document}", doc.text.as_str()), ("{question}", qa.question.as_str()), ("{answer}", qa.answer.as_str())];
    let mut out = String::with_capacity(template.len() + doc.text.len());
    let mut rest = template;
    while !rest.is_empty() {
        let next = slots
            .iter()
            .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, *slot, *value)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, slot, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + slot.len()..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeOptions {
    pub max_concurrency: usize,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each later attempt.
    pub backoff: Duration,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions {
            max_concurrency: 8,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

fn judge_one(judge: &dyn Judge, doc: &Document, qa: &QAItem, opts: &JudgeOptions) -> JudgeOutcome {
    let attempts_allowed = opts.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match judge.classify(doc, qa) {
            Ok(raw) => {
                return match raw.parse::<Verdict>() {
                    Ok(verdict) => JudgeOutcome::Judged(Judgement {
                        doc_id: doc.id.clone(),
                        qa_id: qa.id.clone(),
                        verdict,
                        raw_response: raw,
                    }),
                    Err(()) => JudgeOutcome::Failed(JudgeFailure {
                        doc_id: doc.id.clone(),
                        qa_id: qa.id.clone(),
                        kind: FailureKind::Malformed,
                        message: "response is not one of Support, Refute, Related, Unrelated".into(),
                        raw_response: Some(raw),
                        attempts: attempt,
                    }),
                };
            }
            Err(e) if e.transient && attempt < attempts_allowed => {
                log::debug!("judge attempt {attempt} for `{}` failed: {e}", doc.id);
                std::thread::sleep(opts.backoff * 2u32.pow(attempt - 1));
            }
            Err(e) => {
                return JudgeOutcome::Failed(JudgeFailure {
                    doc_id: doc.id.clone(),
                    qa_id: qa.id.clone(),
                    kind: FailureKind::Transport,
                    message: e.message,
                    raw_response: None,
                    attempts: attempt,
                });
            }
        }
    }
}

/// One outcome per document, in input order. At most `max_concurrency`
/// requests are in flight; failures are isolated per document.
pub fn judge_documents(docs: &[&Document], qa: &QAItem, judge: &dyn Judge, opts: &JudgeOptions) -> Vec<JudgeOutcome> {
    if docs.is_empty() {
        return Vec::new();
    }
    let workers = opts.max_concurrency.clamp(1, docs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<JudgeOutcome>>> = Mutex::new(vec![None; docs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= docs.len() {
                    break;
                }
                let outcome = judge_one(judge, docs[i], qa, opts);
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|o| o.expect("every index judged"))
        .collect()
}

/// Mock answering the same label for every document.
pub struct FixedJudge(pub Verdict);

impl Judge for FixedJudge {
    fn name(&self) -> &str {
        "fixed"
    }

    fn classify(&self, _doc: &Document, _qa: &QAItem) -> Result<String, JudgeError> {
        Ok(self.0.label().to_string())
    }
}

/// Offline heuristic: Support when the answer phrase appears in the document,
/// Related when any keyword does, Unrelated otherwise.
pub struct KeywordJudge;

impl Judge for KeywordJudge {
    fn name(&self) -> &str {
        "keyword-heuristic"
    }

    fn classify(&self, doc: &Document, qa: &QAItem) -> Result<String, JudgeError> {
        let words = alnum_words(&doc.text);
        let verdict = if contains_phrase(&words, &alnum_words(&qa.answer)) {
            Verdict::Support
        } else if qa.keywords.iter().any(|k| contains_phrase(&words, &alnum_words(k))) {
            Verdict::Related
        } else {
            Verdict::Unrelated
        };
        Ok(verdict.label().to_string())
    }
}

/// Judge backed by a closure.
pub struct FnJudge<F>(pub F);

impl<F> Judge for FnJudge<F>
where
    F: Fn(&Document, &QAItem) -> Result<String, JudgeError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn classify(&self, doc: &Document, qa: &QAItem) -> Result<String, JudgeError> {
        (self.0)(doc, qa)
    }
}

/// Fault planned for a document by [`FaultInjectingJudge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Fails with a transient error this many times, then answers.
    Flaky(u32),
    /// Always fails with a transient error.
    Down,
    /// Answers with text that is not a label.
    Garbled,
}

/// Wraps a judge and injects faults chosen per document from `(seed, doc_id)`.
pub struct FaultInjectingJudge<J> {
    pub inner: J,
    pub seed: u64,
    pub flaky_rate: f64,
    pub down_rate: f64,
    pub garbled_rate: f64,
    calls: Mutex<HashMap<String, u32>>,
}

impl<J: Judge> FaultInjectingJudge<J> {
    pub fn new(inner: J, seed: u64, flaky_rate: f64, down_rate: f64, garbled_rate: f64) -> Self {
        FaultInjectingJudge {
            inner,
            seed,
            flaky_rate,
            down_rate,
            garbled_rate,
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn planned_fault(&self, doc_id: &str) -> Fault {
        let mut r = rng::keyed(self.seed, doc_id);
        let u: f64 = r.random();
        if u < self.down_rate {
            Fault::Down
        } else if u < self.down_rate + self.garbled_rate {
            Fault::Garbled
        } else if u < self.down_rate + self.garbled_rate + self.flaky_rate {
            Fault::Flaky(r.random_range(1..=2))
        } else {
            Fault::None
        }
    }

    pub fn calls(&self, doc_id: &str) -> u32 {
        self.calls.lock().expect("calls lock").get(doc_id).copied().unwrap_or(0)
    }
}

impl<J: Judge> Judge for FaultInjectingJudge<J> {
    fn name(&self) -> &str {
        "fault-injecting"
    }

    fn classify(&self, doc: &Document, qa: &QAItem) -> Result<String, JudgeError> {
        let call = {
            let mut calls = self.calls.lock().expect("calls lock");
            let c = calls.entry(doc.id.clone()).or_insert(0);
            *c += 1;
            *c
        };
        match self.planned_fault(&doc.id) {
            Fault::Down => Err(JudgeError::transient("injected outage")),
            Fault::Garbled => Ok("I think it is probably supportive?".to_string()),
            Fault::Flaky(n) if call <= n => Err(JudgeError::transient("injected timeout")),
            _ => self.inner.classify(doc, qa),
        }
    }
}

/// Chat-completion judge over JSON/HTTP.
pub struct HttpJudge {
    agent: ureq::Agent,
    pub endpoint: String,
    pub model_name: String,
    pub timeout: Duration,
    api_key: Option<String>,
    template: String,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>, timeout: Duration, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpJudge {
            agent,
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            timeout,
            api_key,
            template: PROMPT_TEMPLATE.to_string(),
        }
    }

    /// Reads the bearer token from `JUDGE_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>, model_name: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(JUDGE_API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{JUDGE_API_KEY_ENV} is not set; sending unauthenticated requests");
        }
        Self::new(endpoint, model_name, timeout, key)
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn request_body(&self, doc: &Document, qa: &QAItem) -> serde_json::Value {
        serde_json::json!({
            "model": self.model_name,
            "temperature": 0,
            "messages": [{"role": "user", "content": render_prompt(&self.template, doc, qa)}],
        })
    }
}

impl Judge for HttpJudge {
    fn name(&self) -> &str {
        &self.model_name
    }

    fn classify(&self, doc: &Document, qa: &QAItem) -> Result<String, JudgeError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(doc, qa))
            .map_err(|e| JudgeError::transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| JudgeError::transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(JudgeError::transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(JudgeError::permanent(format!("HTTP {status}: {}", body.trim())));
        }
        let content = serde_json::from_str::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string));
        // Anything unexpected is passed on verbatim and flagged as malformed.
        Ok(content.unwrap_or(body))
    }
}

/// Mean verdict counts per QA item for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub subject: String,
    #[serde(rename = "Support")]
    pub support: f64,
    #[serde(rename = "Refute")]
    pub refute: f64,
    #[serde(rename = "Related")]
    pub related: f64,
    #[serde(rename = "Unrelated")]
    pub unrelated: f64,
}

impl AggregateRow {
    pub fn get(&self, v: Verdict) -> f64 {
        match v {
            Verdict::Support => self.support,
            Verdict::Refute => self.refute,
            Verdict::Related => self.related,
            Verdict::Unrelated => self.unrelated,
        }
    }
}

/// Per subject, the mean over its QA items of each verdict's count. Items
/// without judgements count as zeros; failures are not counted.
pub fn aggregate_judgements(outcomes: &[JudgeOutcome], qa_items: &[QAItem]) -> Vec<AggregateRow> {
    let mut subject_of: HashMap<&str, &str> = HashMap::new();
    let mut items_per_subject: BTreeMap<&str, usize> = BTreeMap::new();
    for qa in qa_items {
        subject_of.insert(&qa.id, &qa.subject);
        *items_per_subject.entry(&qa.subject).or_insert(0) += 1;
    }
    let mut counts: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for j in outcomes.iter().filter_map(JudgeOutcome::judgement) {
        match subject_of.get(j.qa_id.as_str()) {
            Some(subject) => {
                let slot = Verdict::ALL.iter().position(|v| *v == j.verdict).expect("known verdict");
                counts.entry(subject).or_insert([0; 4])[slot] += 1;
            }
            None => log::warn!("judgement for unknown QA item `{}` ignored", j.qa_id),
        }
    }
    items_per_subject
        .into_iter()
        .map(|(subject, n)| {
            let c = counts.get(subject).copied().unwrap_or([0; 4]);
            let mean = |i: usize| c[i] as f64 / n as f64;
            AggregateRow {
                subject: subject.to_string(),
                support: mean(0),
                refute: mean(1),
                related: mean(2),
                unrelated: mean(3),
            }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], writer: W) -> Result<(), FactualityError> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["subject", "Support", "Refute", "Related", "Unrelated"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads QA items from JSONL, filling missing ids and validating each item.
pub fn read_qa_items(path: &Path) -> Result<Vec<QAItem>, FactualityError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| FactualityError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut item: QAItem = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if item.id.is_empty() {
            item.id = format!("{}:{}", item.subject, i + 1);
        }
        item.validate().map_err(|e| malformed(e.to_string()))?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), FactualityError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes(path: &Path) -> Result<Vec<JudgeOutcome>, FactualityError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FactualityError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
