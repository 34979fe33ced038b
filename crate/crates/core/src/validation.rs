//! Judging Stage-1 descriptions and extracting Stage-2 labels.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::Topic;
use crate::elicitation::{fill, ElicitationRecord, Respondent, TemplateSet};
use crate::error::{Error, Result};
use crate::jsonl::{self, Appender};
use crate::language::Language;
use crate::providers::{ChatClient, ChatRequest, ExchangeContext, ExchangeStore, Stage};

pub const DESCRIPTION_SYSTEM: &str = include_str!("../data/judge/description_system.txt");
pub const DESCRIPTION_USER: &str = include_str!("../data/judge/description_user.txt");
pub const LABEL_SYSTEM: &str = include_str!("../data/judge/label_system.txt");
pub const LABEL_USER: &str = include_str!("../data/judge/label_user.txt");

pub const JUDGE_MAX_TOKENS: u32 = 1024;
pub const JUDGE_TEMPERATURE: f64 = 0.0;

fn is_arabic_mark(c: char) -> bool {
    // harakat, superscript alef and tatweel
    ('\u{064B}'..='\u{065F}').contains(&c) || c == '\u{0670}' || c == '\u{0640}'
}

/// Lowercase, drop Arabic diacritics, strip surrounding punctuation and
/// collapse internal whitespace.
pub fn normalize_text(text: &str) -> String {
    let lowered: String = text.to_lowercase().chars().filter(|c| !is_arabic_mark(*c)).collect();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Index of the scale label `text` spells, after normalization.
pub fn normalize_label(text: &str, scale: &[String]) -> Option<usize> {
    let t = normalize_text(text);
    if t.is_empty() {
        return None;
    }
    scale.iter().position(|l| normalize_text(l) == t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    VeryNegative,
    Negative,
    Neutral,
    Positive,
    VeryPositive,
    Unknown,
}

impl Label {
    pub const SCALE: [Label; 5] = [
        Label::VeryNegative,
        Label::Negative,
        Label::Neutral,
        Label::Positive,
        Label::VeryPositive,
    ];

    pub fn from_index(i: usize) -> Label {
        Self::SCALE.get(i).copied().unwrap_or(Label::Unknown)
    }

    /// Numeric score on [0, 1]; `None` for unknown.
    pub fn score(self) -> Option<f64> {
        Self::SCALE.iter().position(|l| *l == self).map(|i| i as f64 / 4.0)
    }

    /// English label text.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::VeryNegative => "very negative",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
            Label::Positive => "positive",
            Label::VeryPositive => "very positive",
            Label::Unknown => "unknown",
        }
    }

    pub fn parse(text: &str) -> Option<Label> {
        let t = normalize_text(text).replace('_', " ");
        Self::SCALE.into_iter().chain([Label::Unknown]).find(|l| l.as_str() == t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Refusal,
}

impl Verdict {
    pub fn parse(text: &str) -> Option<Verdict> {
        match normalize_text(text).as_str() {
            "yes" => Some(Verdict::Yes),
            "no" => Some(Verdict::No),
            "refusal" => Some(Verdict::Refusal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Verdict {
    pub value: Verdict,
    pub judge_model: String,
    pub raw: String,
    /// Set when the judge never produced one of the three words.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactMatch,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Label {
    pub value: Label,
    pub method: Method,
    pub raw: String,
}

pub fn description_request(wikipedia: &str, stage1: &str) -> ChatRequest {
    let user = fill(
        DESCRIPTION_USER,
        &[("<WIKIPEDIA>", wikipedia), ("<STAGE 1 RESPONSE>", stage1)],
    );
    ChatRequest::system_user(DESCRIPTION_SYSTEM, user)
        .with_decoding(Some(JUDGE_MAX_TOKENS), Some(JUDGE_TEMPERATURE))
}

/// Judge options: the scale labels plus `unknown`, quoted and comma separated.
pub fn judge_options(scale: &[String]) -> String {
    scale
        .iter()
        .map(String::as_str)
        .chain(["unknown"])
        .map(|l| format!("'{l}'"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn label_request(stage2: &str, scale: &[String]) -> ChatRequest {
    let options = judge_options(scale);
    let system = fill(LABEL_SYSTEM, &[("<SCALE>", &options)]);
    let user = fill(LABEL_USER, &[("<SCALE>", &options), ("<STAGE 2 RESPONSE>", stage2)]);
    ChatRequest::system_user(system, user).with_decoding(Some(JUDGE_MAX_TOKENS), Some(JUDGE_TEMPERATURE))
}

/// Where judge exchanges are cached. The topic slot carries the respondent
/// model too, since many respondents are judged on the same topic.
#[derive(Clone)]
pub struct JudgeContext<'a> {
    pub exchanges: &'a ExchangeStore,
    pub respondent: &'a Respondent,
    pub topic_id: &'a str,
}

impl JudgeContext<'_> {
    fn ctx(&self, judge: &str, stage: Stage) -> ExchangeContext {
        ExchangeContext::new(
            judge,
            Some(self.respondent.language),
            &format!("{}|{}", self.topic_id, self.respondent.model_id),
            stage,
        )
    }
}

/// Asks the description judge whether the Stage-1 text is about the person
/// in the summary. Missing or empty Stage-1 text is a refusal with no call.
pub fn validate_stage1(
    stage1_text: Option<&str>,
    wikipedia_summary: &str,
    client: &dyn ChatClient,
    judge_model: &str,
    jc: &JudgeContext<'_>,
) -> Result<Stage1Verdict> {
    let verdict = |value, raw: &str, flagged| Stage1Verdict {
        value,
        judge_model: judge_model.to_string(),
        raw: raw.to_string(),
        flagged,
    };
    let text = match stage1_text {
        Some(t) if !t.trim().is_empty() => t,
        _ => return Ok(verdict(Verdict::Refusal, "", false)),
    };
    let req = description_request(wikipedia_summary, text);
    let base = jc.ctx(judge_model, Stage::Validation);
    let mut raw = String::new();
    for seq in 0..2 {
        let reply = jc
            .exchanges
            .record_and_replay(client, &base.retry(seq), &req)
            .map_err(|e| Error::Analysis(format!("description judge: {e}")))?;
        raw = reply.text().unwrap_or_default().to_string();
        if let Some(v) = Verdict::parse(&raw) {
            return Ok(verdict(v, &raw, false));
        }
    }
    Ok(verdict(Verdict::No, &raw, true))
}

/// Exact match first; the label judge only sees replies that do not match.
pub fn extract_stage2_label(
    stage2_text: &str,
    scale: &[String],
    client: &dyn ChatClient,
    judge_model: &str,
    jc: &JudgeContext<'_>,
) -> Result<Stage2Label> {
    if let Some(i) = normalize_label(stage2_text, scale) {
        return Ok(Stage2Label {
            value: Label::from_index(i),
            method: Method::ExactMatch,
            raw: stage2_text.to_string(),
        });
    }
    let req = label_request(stage2_text, scale);
    let reply = jc
        .exchanges
        .record_and_replay(client, &jc.ctx(judge_model, Stage::LabelExtraction), &req)
        .map_err(|e| Error::Analysis(format!("label judge: {e}")))?;
    let raw = reply.text().unwrap_or_default().to_string();
    let value = normalize_label(&raw, scale).map(Label::from_index).unwrap_or(Label::Unknown);
    Ok(Stage2Label {
        value,
        method: Method::Judge,
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    #[serde(flatten)]
    pub respondent: Respondent,
    pub topic_id: String,
    pub verdict: Stage1Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Stage2Label>,
}

impl ValidationRecord {
    pub fn key(&self) -> (Respondent, String) {
        (self.respondent.clone(), self.topic_id.clone())
    }
}

pub struct ValidationStore {
    records: Mutex<HashMap<(Respondent, String), ValidationRecord>>,
    writer: Option<Mutex<Appender>>,
}

impl ValidationStore {
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<ValidationRecord> = jsonl::read_all(path)?;
        Ok(Self {
            records: Mutex::new(records.into_iter().map(|r| (r.key(), r)).collect()),
            writer: Some(Mutex::new(Appender::open(path)?)),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            records: Mutex::new(HashMap::new()),
            writer: None,
        }
    }

    pub fn contains(&self, respondent: &Respondent, topic_id: &str) -> bool {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .contains_key(&(respondent.clone(), topic_id.to_string()))
    }

    pub fn records(&self) -> Vec<ValidationRecord> {
        let mut v: Vec<_> = self
            .records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        v.sort_by_key(|r| r.key());
        v
    }

    fn commit(&self, record: ValidationRecord) -> Result<()> {
        if let Some(w) = &self.writer {
            w.lock().unwrap_or_else(|e| e.into_inner()).append(&record)?;
        }
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(record.key(), record);
        Ok(())
    }
}

pub fn read_validations(path: &Path) -> Result<Vec<ValidationRecord>> {
    if !path.exists() {
        return Err(Error::StageOrder(format!(
            "{} not found; run the validate stage first",
            path.display()
        )));
    }
    Ok(ValidationStore::open(path)?.records())
}

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub description_judge: String,
    pub label_judge: String,
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub validated: usize,
    pub skipped: usize,
    pub verdicts: BTreeMap<String, usize>,
    pub exact_matches: usize,
    pub judged_labels: usize,
    pub flagged: usize,
    pub errors: usize,
}

fn validate_one(
    rec: &ElicitationRecord,
    topic: Option<&Topic>,
    templates: &TemplateSet,
    client: &dyn ChatClient,
    exchanges: &ExchangeStore,
    cfg: &ValidationConfig,
) -> Result<ValidationRecord> {
    let jc = JudgeContext {
        exchanges,
        respondent: &rec.respondent,
        topic_id: &rec.topic_id,
    };
    let summary = topic.and_then(|t| t.summary(rec.respondent.language)).unwrap_or("");
    let verdict = if summary.trim().is_empty() && rec.stage1_text.is_some() {
        Stage1Verdict {
            value: Verdict::No,
            judge_model: cfg.description_judge.clone(),
            raw: String::new(),
            flagged: true,
        }
    } else {
        validate_stage1(rec.stage1_text.as_deref(), summary, client, &cfg.description_judge, &jc)?
    };
    let label = match &rec.stage2_text {
        Some(text) => {
            let scale = &templates.get(rec.respondent.language)?.scale;
            Some(extract_stage2_label(text, scale, client, &cfg.label_judge, &jc)?)
        }
        None => None,
    };
    Ok(ValidationRecord {
        respondent: rec.respondent.clone(),
        topic_id: rec.topic_id.clone(),
        verdict,
        label,
    })
}

/// Validates every record not yet in `store`. Judge failures are counted
/// and left unvalidated so that a later run picks them up.
pub fn run_validation(
    records: &[ElicitationRecord],
    topics: &[Topic],
    templates: &TemplateSet,
    client: &dyn ChatClient,
    exchanges: &ExchangeStore,
    store: &ValidationStore,
    cfg: &ValidationConfig,
) -> Result<ValidationSummary> {
    let by_id: HashMap<&str, &Topic> = topics.iter().map(|t| (t.id.as_str(), t)).collect();
    let work: Vec<&ElicitationRecord> = records
        .iter()
        .filter(|r| !store.contains(&r.respondent, &r.topic_id))
        .collect();
    let next = AtomicUsize::new(0);
    let errors = AtomicUsize::new(0);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1).min(work.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(rec) = work.get(i) else { break };
                let topic = by_id.get(rec.topic_id.as_str()).copied();
                match validate_one(rec, topic, templates, client, exchanges, cfg) {
                    Ok(v) => {
                        if let Err(e) = store.commit(v) {
                            fatal.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                            break;
                        }
                    }
                    Err(e) => {
                        tracing::warn!(respondent = %rec.respondent, topic = %rec.topic_id, error = %e, "validation failed");
                        errors.fetch_add(1, Ordering::SeqCst);
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    let mut summary = ValidationSummary {
        validated: work.len() - errors.load(Ordering::SeqCst),
        skipped: records.len() - work.len(),
        errors: errors.into_inner(),
        ..Default::default()
    };
    for v in store.records() {
        *summary.verdicts.entry(format!("{:?}", v.verdict.value).to_lowercase()).or_default() += 1;
        summary.flagged += v.verdict.flagged as usize;
        match v.label.map(|l| l.method) {
            Some(Method::ExactMatch) => summary.exact_matches += 1,
            Some(Method::Judge) => summary.judged_labels += 1,
            None => {}
        }
    }
    Ok(summary)
}

/// Scale labels for `language` from the packaged templates.
pub fn scale_for(language: Language) -> Vec<String> {
    TemplateSet::packaged()
        .get(language)
        .map(|t| t.scale.clone())
        .unwrap_or_default()
}
