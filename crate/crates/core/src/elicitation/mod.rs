//! Two-stage prompting: describe a person, then judge the description in a
//! fresh conversation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::jsonl::{self, Appender};
use crate::language::Language;
use crate::providers::{ChatClient, ChatRequest, ExchangeContext, ExchangeStore, Roster, Stage};

pub mod search;

pub use search::{search_templates, Candidate, DesignSpace, Dimension, ModularTemplate, SearchRound};

pub const VAR: &str = "<VAR>";
pub const ANS: &str = "<ANS>";
pub const SCALE: &str = "<SCALE>";

/// Substitutes every slot in one left-to-right pass, so text inserted for
/// one slot is never rescanned for another.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while !rest.is_empty() {
        if rest.starts_with('<') {
            for (slot, value) in slots {
                if let Some(tail) = rest.strip_prefix(slot) {
                    out.push_str(value);
                    rest = tail;
                    continue 'scan;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// `'a', 'b', 'c', 'd' or 'e'`, with the final conjunction in the template language.
pub fn render_scale(labels: &[String], conjunction: &str) -> String {
    let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
    match quoted.split_last() {
        None => String::new(),
        Some((last, [])) => last.clone(),
        Some((last, init)) => format!("{}{conjunction}{last}", init.join(", ")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub language: Language,
    pub stage1: String,
    pub stage2: String,
    /// Stage 2 opens a new conversation.
    pub stage2_reset: bool,
    pub assurance: String,
    /// Ordered from very negative to very positive.
    pub scale: Vec<String>,
    pub scale_conjunction: String,
    /// sha256 of the template file.
    #[serde(skip)]
    pub version: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t: PromptTemplate =
            toml::from_str(text).map_err(|e| Error::Template(e.to_string()))?;
        t.version = hex::encode(Sha256::digest(text.as_bytes()));
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let lang = self.language.code();
        if self.scale.len() != 5 || self.scale.iter().any(|l| l.trim().is_empty()) {
            return Err(Error::Template(format!("{lang}: scale must have exactly five labels")));
        }
        if !self.stage1.contains(VAR) {
            return Err(Error::Template(format!("{lang}: stage1 lacks {VAR}")));
        }
        for slot in [VAR, ANS, SCALE] {
            if !self.stage2.contains(slot) {
                return Err(Error::Template(format!("{lang}: stage2 lacks {slot}")));
            }
        }
        if !self.stage2_reset {
            return Err(Error::Template(format!("{lang}: stage2 must start a new conversation")));
        }
        Ok(())
    }

    pub fn rendered_scale(&self) -> String {
        render_scale(&self.scale, &self.scale_conjunction)
    }

    pub fn stage1_with_name(&self, name: &str) -> String {
        fill(&self.stage1, &[(VAR, name)])
    }

    pub fn stage2_with_name(&self, name: &str, stage1_reply: &str) -> String {
        let scale = self.rendered_scale();
        let body = fill(&self.stage2, &[(VAR, name), (ANS, stage1_reply), (SCALE, &scale)]);
        if self.assurance.is_empty() {
            body
        } else {
            format!("{body} {}", self.assurance)
        }
    }
}

/// `None` when the topic has no name in the template language.
pub fn render_stage1(template: &PromptTemplate, topic: &Topic) -> Option<String> {
    topic.name(template.language).map(|n| template.stage1_with_name(n))
}

pub fn render_stage2(template: &PromptTemplate, topic: &Topic, stage1_reply: &str) -> Option<String> {
    topic
        .name(template.language)
        .map(|n| template.stage2_with_name(n, stage1_reply))
}

const PACKAGED: [(Language, &str); 6] = [
    (Language::Arabic, include_str!("../../data/templates/ar.toml")),
    (Language::Chinese, include_str!("../../data/templates/zh.toml")),
    (Language::English, include_str!("../../data/templates/en.toml")),
    (Language::French, include_str!("../../data/templates/fr.toml")),
    (Language::Russian, include_str!("../../data/templates/ru.toml")),
    (Language::Spanish, include_str!("../../data/templates/es.toml")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<Language, PromptTemplate>,
}

impl TemplateSet {
    pub fn packaged() -> Self {
        let templates = PACKAGED
            .iter()
            .map(|(l, text)| (*l, PromptTemplate::parse(text).expect("packaged template is valid")))
            .collect();
        Self { templates }
    }

    /// Reads `<code>.toml` (e.g. `en.toml`) for every language present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for lang in Language::ALL {
            let path = dir.join(format!("{}.toml", lang.code().to_lowercase()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let t = PromptTemplate::parse(&text)
                .map_err(|e| Error::Template(format!("{}: {e}", path.display())))?;
            if t.language != lang {
                return Err(Error::Template(format!(
                    "{}: declares language {}",
                    path.display(),
                    t.language.name()
                )));
            }
            templates.insert(lang, t);
        }
        if templates.is_empty() {
            return Err(Error::Template(format!("no templates in {}", dir.display())));
        }
        Ok(Self { templates })
    }

    pub fn get(&self, language: Language) -> Result<&PromptTemplate> {
        self.templates
            .get(&language)
            .ok_or_else(|| Error::Template(format!("no template for {}", language.name())))
    }

    pub fn languages(&self) -> impl Iterator<Item = Language> + '_ {
        self.templates.keys().copied()
    }

    /// Combined version of all templates, for run manifests.
    pub fn version(&self) -> String {
        let mut h = Sha256::new();
        for t in self.templates.values() {
            h.update(t.version.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A (model, language) pair; its answers form one survey respondent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Respondent {
    pub model_id: String,
    pub language: Language,
}

impl Respondent {
    pub fn new(model_id: &str, language: Language) -> Self {
        Self {
            model_id: model_id.to_string(),
            language,
        }
    }

    /// Checks the language against the roster.
    pub fn checked(roster: &Roster, model_id: &str, language: Language) -> Result<Self> {
        let spec = roster
            .get(model_id)
            .ok_or_else(|| Error::Config(format!("unknown model `{model_id}`")))?;
        if !spec.supports(language) {
            return Err(Error::Config(format!(
                "model `{model_id}` does not support {}",
                language.name()
            )));
        }
        Ok(Self::new(model_id, language))
    }

    /// Display label, e.g. `GPT-4o (EN)`.
    pub fn label(&self) -> String {
        format!("{} ({})", self.model_id, self.language.code())
    }
}

impl fmt::Display for Respondent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn respondents(
    roster: &Roster,
    models: Option<&std::collections::BTreeSet<String>>,
    languages: Option<&std::collections::BTreeSet<Language>>,
) -> Vec<Respondent> {
    roster
        .respondent_pairs(models, languages)
        .into_iter()
        .map(|(m, l)| Respondent::new(&m, l))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElicitationStatus {
    Complete,
    Stage1Failed,
    Stage2Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    #[serde(flatten)]
    pub respondent: Respondent,
    pub topic_id: String,
    pub template_version: String,
    pub stage1_text: Option<String>,
    pub stage2_text: Option<String>,
    pub status: ElicitationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ElicitationRecord {
    pub fn key(&self) -> (Respondent, String) {
        (self.respondent.clone(), self.topic_id.clone())
    }
}

/// Runs both stages for one (respondent, topic). Each stage is its own
/// single-turn conversation, so Stage 2 never sees Stage-1 state.
pub fn elicit(
    respondent: &Respondent,
    topic: &Topic,
    template: &PromptTemplate,
    client: &dyn ChatClient,
    exchanges: &ExchangeStore,
) -> ElicitationRecord {
    let mut record = ElicitationRecord {
        respondent: respondent.clone(),
        topic_id: topic.id.clone(),
        template_version: template.version.clone(),
        stage1_text: None,
        stage2_text: None,
        status: ElicitationStatus::Stage1Failed,
        failure: None,
    };
    let Some(name) = topic.name(template.language) else {
        record.failure = Some(format!("no {} name", template.language.name()));
        return record;
    };
    let ctx = |stage| ExchangeContext::new(&respondent.model_id, Some(respondent.language), &topic.id, stage);

    let stage1 = ChatRequest::user(template.stage1_with_name(name));
    let answer = match exchanges.record_and_replay(client, &ctx(Stage::Stage1), &stage1) {
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
        Ok(reply) => match reply.text() {
            Some(t) if !t.trim().is_empty() => t.to_string(),
            Some(_) => {
                record.failure = Some("empty reply".into());
                return record;
            }
            None => {
                record.failure = Some("refused by provider".into());
                return record;
            }
        },
    };
    record.stage1_text = Some(answer.clone());
    record.status = ElicitationStatus::Stage2Failed;

    let stage2 = ChatRequest::user(template.stage2_with_name(name, &answer));
    match exchanges.record_and_replay(client, &ctx(Stage::Stage2), &stage2) {
        Err(e) => record.failure = Some(e.to_string()),
        Ok(reply) => match reply.text() {
            Some(t) => {
                record.stage2_text = Some(t.to_string());
                record.status = ElicitationStatus::Complete;
            }
            None => record.failure = Some("refused by provider".into()),
        },
    }
    record
}

/// Append-only log of elicitation records; the last record per pair wins.
pub struct ElicitationStore {
    records: Mutex<HashMap<(Respondent, String), ElicitationRecord>>,
    writer: Option<Mutex<Appender>>,
}

impl ElicitationStore {
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<ElicitationRecord> = jsonl::read_all(path)?;
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

    pub fn get(&self, respondent: &Respondent, topic_id: &str) -> Option<ElicitationRecord> {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&(respondent.clone(), topic_id.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records sorted by respondent, then topic.
    pub fn records(&self) -> Vec<ElicitationRecord> {
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

    pub fn commit(&self, record: ElicitationRecord) -> Result<()> {
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

pub fn read_elicitations(path: &Path) -> Result<Vec<ElicitationRecord>> {
    if !path.exists() {
        return Err(Error::StageOrder(format!(
            "{} not found; run the elicit stage first",
            path.display()
        )));
    }
    Ok(ElicitationStore::open(path)?.records())
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub workers: usize,
    /// Re-attempt pairs whose stored record is a failure.
    pub retry_failed: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            workers: 16,
            retry_failed: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RespondentCounts {
    pub complete: usize,
    pub stage1_failed: usize,
    pub stage2_failed: usize,
    /// Pairs already present in the store before this run.
    pub reused: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub per_respondent: BTreeMap<String, RespondentCounts>,
    pub attempted: usize,
    pub provider_calls: u64,
}

impl CampaignSummary {
    pub fn total(&self) -> RespondentCounts {
        let mut t = RespondentCounts::default();
        for c in self.per_respondent.values() {
            t.complete += c.complete;
            t.stage1_failed += c.stage1_failed;
            t.stage2_failed += c.stage2_failed;
            t.reused += c.reused;
        }
        t
    }
}

/// Attempts every (respondent, topic) pair not yet in `store`. Failures are
/// recorded per pair and never abort the run.
pub fn run_campaign(
    respondents: &[Respondent],
    topics: &[Topic],
    templates: &TemplateSet,
    client: &dyn ChatClient,
    exchanges: &ExchangeStore,
    store: &ElicitationStore,
    cfg: &CampaignConfig,
) -> Result<CampaignSummary> {
    for r in respondents {
        templates.get(r.language)?;
    }
    let mut reused: BTreeMap<&Respondent, usize> = BTreeMap::new();
    let mut work = Vec::new();
    for r in respondents {
        for t in topics {
            match store.get(r, &t.id) {
                Some(rec) if !(cfg.retry_failed && rec.status != ElicitationStatus::Complete) => {
                    *reused.entry(r).or_default() += 1;
                }
                _ => work.push((r, t)),
            }
        }
    }
    let calls_before = exchanges.misses();
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1).min(work.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((r, t)) = work.get(i) else { break };
                let template = templates.get(r.language).expect("checked above");
                let record = elicit(r, t, template, client, exchanges);
                if let Some(f) = &record.failure {
                    tracing::debug!(respondent = %r, topic = %t.id, failure = %f, "pair failed");
                }
                if let Err(e) = store.commit(record) {
                    first_error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }

    let mut summary = CampaignSummary {
        attempted: work.len(),
        provider_calls: exchanges.misses() - calls_before,
        ..Default::default()
    };
    for r in respondents {
        let c = summary.per_respondent.entry(r.label()).or_default();
        c.reused = reused.get(r).copied().unwrap_or(0);
        for t in topics {
            match store.get(r, &t.id).map(|rec| rec.status) {
                Some(ElicitationStatus::Complete) => c.complete += 1,
                Some(ElicitationStatus::Stage1Failed) => c.stage1_failed += 1,
                Some(ElicitationStatus::Stage2Failed) => c.stage2_failed += 1,
                None => {}
            }
        }
    }
    Ok(summary)
}
