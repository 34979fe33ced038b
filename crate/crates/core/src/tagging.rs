//! Ideology tag taxonomy and topic tagging through a judge model.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::jsonl::{self, Appender};
use crate::language::Language;
use crate::providers::{ChatClient, ChatRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    #[serde(alias = "none")]
    Neutral,
}

impl Sentiment {
    pub fn marker(self) -> &'static str {
        match self {
            Sentiment::Positive => "+",
            Sentiment::Negative => "-",
            Sentiment::Neutral => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagDef {
    pub code: String,
    pub title: String,
    pub description: String,
    pub display_name: String,
    pub sentiment: Sentiment,
}

impl TagDef {
    /// Short label used in figures, e.g. `European Union (+)`.
    pub fn label(&self) -> String {
        match self.sentiment {
            Sentiment::Neutral => self.display_name.clone(),
            s => format!("{} ({})", self.display_name, s.marker()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    tags: Vec<TagDef>,
}

pub const PACKAGED_TAXONOMY: &str = include_str!("../data/taxonomy.json");

impl Taxonomy {
    pub fn new(tags: Vec<TagDef>) -> Result<Self> {
        validate(&tags)?;
        Ok(Self { tags })
    }

    pub fn packaged() -> Self {
        Self::parse(PACKAGED_TAXONOMY).expect("packaged taxonomy is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Taxonomy("taxonomy file is empty".into()));
        }
        let tags: Vec<TagDef> =
            serde_json::from_str(text).map_err(|e| Error::json("taxonomy", e))?;
        Self::new(tags)
    }

    pub fn tags(&self) -> &[TagDef] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&TagDef> {
        self.tags.iter().find(|t| t.code == code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.get(code).is_some()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|t| t.code.as_str())
    }

    pub fn label(&self, code: &str) -> String {
        self.get(code).map(TagDef::label).unwrap_or_else(|| code.to_string())
    }
}

/// Country subcategories come in pairs: `108_x` (positive) and `110_x` (negative).
fn counterpart(code: &str) -> Option<String> {
    let (base, suffix) = code.split_once('_')?;
    match base {
        "108" => Some(format!("110_{suffix}")),
        "110" => Some(format!("108_{suffix}")),
        _ => None,
    }
}

fn validate(tags: &[TagDef]) -> Result<()> {
    if tags.is_empty() {
        return Err(Error::Taxonomy("taxonomy contains no tags".into()));
    }
    let mut codes = HashSet::new();
    let mut labels = HashSet::new();
    for t in tags {
        if t.code.trim().is_empty() || t.title.trim().is_empty() || t.display_name.trim().is_empty() {
            return Err(Error::Taxonomy(format!("tag `{}` has an empty field", t.code)));
        }
        if !codes.insert(t.code.as_str()) {
            return Err(Error::Taxonomy(format!("duplicate code `{}`", t.code)));
        }
        if !labels.insert((t.display_name.as_str(), t.sentiment)) {
            return Err(Error::Taxonomy(format!(
                "display tag `{}` is used twice",
                t.label()
            )));
        }
    }
    for t in tags {
        if let Some(other) = counterpart(&t.code) {
            if !codes.contains(other.as_str()) {
                return Err(Error::Taxonomy(format!(
                    "dangling code `{}`: counterpart `{other}` missing",
                    t.code
                )));
            }
        }
    }
    Ok(())
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Taxonomy::parse(&text).map_err(|e| match e {
        Error::Taxonomy(m) => Error::Taxonomy(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub const TAGGING_PREAMBLE: &str = "Given the following summary, tell me what tags apply to this person based on the provided list of tags. Present the results in JSON format. \nDon't return the description fields in your response; they are here for your reference only.\n\nOutput the results in the following JSON format:\n";

fn json_str(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_default()
}

pub fn build_tagging_prompt(summary: &str, taxonomy: &Taxonomy) -> String {
    let mut out = String::from(TAGGING_PREAMBLE);
    out.push_str("{\n    \"categories\": {\n");
    let n = taxonomy.len();
    for (i, t) in taxonomy.tags().iter().enumerate() {
        out.push_str(&format!(
            "        {}: {{\n            \"title\": {},\n            \"description\": {},\n            \"result\": true/false\n        }}{}\n",
            json_str(&t.code),
            json_str(&t.title),
            json_str(&t.description),
            if i + 1 < n { "," } else { "" }
        ));
    }
    out.push_str("    }\n}\n");
    out.push_str("Summary:\n\n");
    out.push_str(summary);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable tagging response: {0}")]
pub struct TagParseError(pub String);

/// The outermost `{ ... }` span, ignoring code fences and chatter.
fn json_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn truthy(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        Value::Object(o) => o.get("result").and_then(truthy),
        _ => None,
    }
}

/// Codes whose `result` is true. Omitted codes count as false; unknown codes
/// are dropped with a warning.
pub fn parse_tag_response(raw: &str, taxonomy: &Taxonomy) -> std::result::Result<BTreeSet<String>, TagParseError> {
    let span = json_span(raw).ok_or_else(|| TagParseError("no JSON object found".into()))?;
    let v: Value = serde_json::from_str(span).map_err(|e| TagParseError(e.to_string()))?;
    let cats = v
        .get("categories")
        .and_then(Value::as_object)
        .ok_or_else(|| TagParseError("missing `categories` object".into()))?;
    let mut out = BTreeSet::new();
    for (code, entry) in cats {
        let Some(flag) = truthy(entry) else {
            return Err(TagParseError(format!("category `{code}` has no boolean result")));
        };
        if !taxonomy.contains(code) {
            tracing::warn!(code = %code, "dropping unknown tag code");
            continue;
        }
        if flag {
            out.insert(code.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub topic_id: String,
    pub tags: BTreeSet<String>,
    pub judge_model: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TagOutcome {
    Assigned(TagAssignment),
    Failed {
        topic_id: String,
        judge_model: String,
        reason: String,
        attempts: u32,
    },
}

impl TagOutcome {
    pub fn topic_id(&self) -> &str {
        match self {
            TagOutcome::Assigned(a) => &a.topic_id,
            TagOutcome::Failed { topic_id, .. } => topic_id,
        }
    }
}

/// Append-only record of tagging outcomes; one line per attempt batch.
pub struct TagStore {
    assigned: Mutex<BTreeMap<String, TagAssignment>>,
    writer: Option<Mutex<Appender>>,
}

impl TagStore {
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<TagOutcome> = jsonl::read_all(path)?;
        let mut assigned = BTreeMap::new();
        for r in records {
            if let TagOutcome::Assigned(a) = r {
                assigned.insert(a.topic_id.clone(), a);
            }
        }
        Ok(Self {
            assigned: Mutex::new(assigned),
            writer: Some(Mutex::new(Appender::open(path)?)),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            assigned: Mutex::new(BTreeMap::new()),
            writer: None,
        }
    }

    pub fn get(&self, topic_id: &str) -> Option<TagAssignment> {
        self.assigned.lock().unwrap_or_else(|e| e.into_inner()).get(topic_id).cloned()
    }

    pub fn assignments(&self) -> Vec<TagAssignment> {
        self.assigned.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    fn record(&self, outcome: &TagOutcome) -> Result<()> {
        if let Some(w) = &self.writer {
            w.lock().unwrap_or_else(|e| e.into_inner()).append(outcome)?;
        }
        if let TagOutcome::Assigned(a) = outcome {
            self.assigned
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(a.topic_id.clone(), a.clone());
        }
        Ok(())
    }
}

/// Reads the assignments of a finished tagging run.
pub fn read_assignments(path: &Path) -> Result<Vec<TagAssignment>> {
    if !path.exists() {
        return Err(Error::StageOrder(format!(
            "{} not found; run the tag stage first",
            path.display()
        )));
    }
    Ok(TagStore::open(path)?.assignments())
}

#[derive(Debug, Clone)]
pub struct TaggingConfig {
    pub judge_model: String,
    /// Re-asks after an unparseable reply.
    pub max_retries: u32,
    pub concurrency: usize,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl TaggingConfig {
    pub fn new(judge_model: &str) -> Self {
        Self {
            judge_model: judge_model.to_string(),
            max_retries: 2,
            concurrency: 4,
            temperature: Some(0.0),
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaggingSummary {
    pub already_done: usize,
    pub assigned: usize,
    pub failed: usize,
    pub judge_calls: usize,
}

fn tag_one(
    topic: &Topic,
    taxonomy: &Taxonomy,
    client: &dyn ChatClient,
    cfg: &TaggingConfig,
    calls: &AtomicUsize,
) -> TagOutcome {
    let fail = |reason: String, attempts: u32| TagOutcome::Failed {
        topic_id: topic.id.clone(),
        judge_model: cfg.judge_model.clone(),
        reason,
        attempts,
    };
    let summary = match topic.summary(Language::English) {
        Some(s) if !s.trim().is_empty() => s,
        _ => return fail("no English summary".into(), 0),
    };
    let request = ChatRequest::user(build_tagging_prompt(summary, taxonomy))
        .with_decoding(cfg.max_tokens, cfg.temperature);
    let mut last = String::new();
    for attempt in 1..=cfg.max_retries + 1 {
        calls.fetch_add(1, Ordering::SeqCst);
        let reply = match client.send_chat(&cfg.judge_model, &request) {
            Ok(r) => r,
            // transport retries already happened inside the client
            Err(e) => return fail(e.to_string(), attempt),
        };
        let Some(text) = reply.text() else {
            return fail("judge refused".into(), attempt);
        };
        match parse_tag_response(text, taxonomy) {
            Ok(tags) => {
                return TagOutcome::Assigned(TagAssignment {
                    topic_id: topic.id.clone(),
                    tags,
                    judge_model: cfg.judge_model.clone(),
                    raw_response: text.to_string(),
                })
            }
            Err(e) => last = e.to_string(),
        }
    }
    fail(last, cfg.max_retries + 1)
}

/// Tags every topic not yet assigned in `store`. Failures are recorded per
/// topic and retried on the next run.
pub fn tag_topics(
    topics: &[Topic],
    taxonomy: &Taxonomy,
    client: &dyn ChatClient,
    store: &TagStore,
    cfg: &TaggingConfig,
) -> Result<TaggingSummary> {
    let pending: Vec<&Topic> = topics.iter().filter(|t| store.get(&t.id).is_none()).collect();
    let next = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let assigned = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..cfg.concurrency.max(1).min(pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(topic) = pending.get(i) else { break };
                let outcome = tag_one(topic, taxonomy, client, cfg, &calls);
                match &outcome {
                    TagOutcome::Assigned(_) => assigned.fetch_add(1, Ordering::SeqCst),
                    TagOutcome::Failed { reason, .. } => {
                        tracing::warn!(topic = %topic.id, %reason, "tagging failed");
                        failed.fetch_add(1, Ordering::SeqCst)
                    }
                };
                if let Err(e) = store.record(&outcome) {
                    first_error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    Ok(TaggingSummary {
        already_done: topics.len() - pending.len(),
        assigned: assigned.into_inner(),
        failed: failed.into_inner(),
        judge_calls: calls.into_inner(),
    })
}

/// Number of topics carrying each tag.
pub fn tag_frequencies<'a>(assignments: impl IntoIterator<Item = &'a TagAssignment>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for a in assignments {
        for code in &a.tags {
            *out.entry(code.clone()).or_insert(0) += 1;
        }
    }
    out
}

impl fmt::Display for TagDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.code, self.title)
    }
}
