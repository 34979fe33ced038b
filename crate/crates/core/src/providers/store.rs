//! Append-only exchange store with record/replay.
//!
//! Every successful exchange is appended as one JSON line. A request whose
//! key is already present is answered from the store without calling the
//! provider, which makes every stage resumable.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatClient, ChatReply, ChatRequest, ProviderError};
use crate::error::{Error, Result};
use crate::jsonl::{self, Appender};
use crate::language::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    /// Stage-1 description judge.
    Validation,
    /// Stage-2 label-extraction judge.
    LabelExtraction,
    Tagging,
}

/// Who asked what, for bookkeeping. `sequence` distinguishes deliberate
/// re-asks of an identical request (e.g. a judge retry).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExchangeContext {
    pub model_id: String,
    pub language: Option<Language>,
    pub topic_id: String,
    pub stage: Stage,
    #[serde(default)]
    pub sequence: u32,
}

impl ExchangeContext {
    pub fn new(model_id: &str, language: Option<Language>, topic_id: &str, stage: Stage) -> Self {
        Self {
            model_id: model_id.to_string(),
            language,
            topic_id: topic_id.to_string(),
            stage,
            sequence: 0,
        }
    }

    pub fn retry(&self, sequence: u32) -> Self {
        Self {
            sequence,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub key: String,
    #[serde(flatten)]
    pub context: ExchangeContext,
    pub request: ChatRequest,
    pub reply: ChatReply,
    /// Transport attempts used to obtain the reply.
    pub attempt: u32,
    /// Unix seconds.
    pub collected_at: u64,
}

pub fn exchange_key(ctx: &ExchangeContext, request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(ctx.model_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(&ctx.stage).unwrap_or_default());
    h.update(ctx.sequence.to_le_bytes());
    h.update(serde_json::to_vec(request).unwrap_or_default());
    hex::encode(h.finalize())
}

type Identity = (String, Option<Language>, String, Stage, u32);

fn identity(ctx: &ExchangeContext) -> Identity {
    (
        ctx.model_id.clone(),
        ctx.language,
        ctx.topic_id.clone(),
        ctx.stage,
        ctx.sequence,
    )
}

pub struct ExchangeStore {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, ChatReply>>,
    identities: RwLock<HashSet<Identity>>,
    writer: Option<Mutex<Appender>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ExchangeStore {
    /// Opens (or creates) a store file. Fails on the first corrupt record.
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<ExchangeRecord> = jsonl::read_all(path)?;
        let mut index = HashMap::with_capacity(records.len());
        let mut identities = HashSet::with_capacity(records.len());
        for r in records {
            identities.insert(identity(&r.context));
            index.entry(r.key).or_insert(r.reply);
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            identities: RwLock::new(identities),
            writer: Some(Mutex::new(Appender::open(path)?)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Store that forgets everything when dropped.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(HashMap::new()),
            identities: RwLock::new(HashSet::new()),
            writer: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn lookup(&self, ctx: &ExchangeContext, request: &ChatRequest) -> Option<ChatReply> {
        let key = exchange_key(ctx, request);
        self.index
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
            .cloned()
    }

    fn append(&self, ctx: &ExchangeContext, request: &ChatRequest, reply: &ChatReply) -> Result<()> {
        let key = exchange_key(ctx, request);
        let id = identity(ctx);
        {
            let mut ids = self.identities.write().unwrap_or_else(|e| e.into_inner());
            if !ids.insert(id) {
                return Err(Error::Config(format!(
                    "exchange identity already recorded: {} {:?} {} {:?} #{}",
                    ctx.model_id, ctx.language, ctx.topic_id, ctx.stage, ctx.sequence
                )));
            }
        }
        if let Some(w) = &self.writer {
            let record = ExchangeRecord {
                key: key.clone(),
                context: ctx.clone(),
                request: request.clone(),
                reply: reply.clone(),
                attempt: reply.attempts,
                collected_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            w.lock().unwrap_or_else(|e| e.into_inner()).append(&record)?;
        }
        self.index
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, reply.clone());
        Ok(())
    }

    /// Serves from the store when possible; otherwise sends and records.
    /// Failed sends are not recorded, so they are retried on the next run.
    pub fn record_and_replay(
        &self,
        client: &dyn ChatClient,
        ctx: &ExchangeContext,
        request: &ChatRequest,
    ) -> std::result::Result<ChatReply, ExchangeError> {
        if let Some(reply) = self.lookup(ctx, request) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(reply);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let reply = client.send_chat(&ctx.model_id, request)?;
        self.append(ctx, request, &reply)?;
        Ok(reply)
    }

    /// All records currently on disk, in append order.
    pub fn records(&self) -> Result<Vec<ExchangeRecord>> {
        match &self.path {
            Some(p) => jsonl::read_all(p),
            None => Ok(Vec::new()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExchangeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Client, MockProvider, RetryPolicy};
    use std::sync::Arc;

    fn setup() -> (Arc<MockProvider>, Client) {
        let mock = Arc::new(MockProvider::seeded(1));
        let mut c = Client::new(RetryPolicy::immediate(1));
        c.register("m", mock.clone(), 4);
        (mock, c)
    }

    fn ctx(topic: &str) -> ExchangeContext {
        ExchangeContext::new("m", Some(Language::English), topic, Stage::Stage1)
    }

    #[test]
    fn second_identical_request_is_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let (mock, client) = setup();
        let req = ChatRequest::user("Tell me about A.");
        let store = ExchangeStore::open(&path).unwrap();
        let a = store.record_and_replay(&client, &ctx("a"), &req).unwrap();
        let b = store.record_and_replay(&client, &ctx("a"), &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.calls(), 1);
        drop(store);

        // reopened store replays from disk
        let store = ExchangeStore::open(&path).unwrap();
        let c = store.record_and_replay(&client, &ctx("a"), &req).unwrap();
        assert_eq!(a.content, c.content);
        assert_eq!(mock.calls(), 1);
        assert_eq!(store.hits(), 1);

        // deleted store means the provider is called again
        std::fs::remove_file(&path).unwrap();
        let store = ExchangeStore::open(&path).unwrap();
        store.record_and_replay(&client, &ctx("a"), &req).unwrap();
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn interleaved_requests_cached_independently() {
        let (mock, client) = setup();
        let store = ExchangeStore::in_memory();
        let r1 = ChatRequest::user("one");
        let r2 = ChatRequest::user("two");
        let a1 = store.record_and_replay(&client, &ctx("1"), &r1).unwrap();
        let a2 = store.record_and_replay(&client, &ctx("2"), &r2).unwrap();
        let b1 = store.record_and_replay(&client, &ctx("1"), &r1).unwrap();
        let b2 = store.record_and_replay(&client, &ctx("2"), &r2).unwrap();
        assert_eq!((a1, a2), (b1, b2));
        assert_eq!(mock.calls(), 2);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn corrupt_store_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let (_, client) = setup();
        let store = ExchangeStore::open(&path).unwrap();
        store
            .record_and_replay(&client, &ctx("a"), &ChatRequest::user("x"))
            .unwrap();
        drop(store);
        let good_len = std::fs::metadata(&path).unwrap().len();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"key\": truncated\n");
        std::fs::write(&path, bytes).unwrap();
        match ExchangeStore::open(&path) {
            Err(Error::StoreCorrupt { offset, .. }) => assert_eq!(offset, good_len),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("corruption not detected"),
        }
    }

    #[test]
    fn store_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let (_, client) = setup();
        let store = ExchangeStore::open(&path).unwrap();
        store.record_and_replay(&client, &ctx("a"), &ChatRequest::user("x")).unwrap();
        let before = std::fs::read(&path).unwrap();
        store.record_and_replay(&client, &ctx("a"), &ChatRequest::user("x")).unwrap();
        store.record_and_replay(&client, &ctx("b"), &ChatRequest::user("y")).unwrap();
        let after = std::fs::read(&path).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(store.records().unwrap().len(), 2);
    }

    #[test]
    fn provider_failures_are_not_recorded() {
        let mock = Arc::new(MockProvider::scripted(vec![
            Err(ProviderError::Http { status: 500, body: String::new() }),
            Ok("ok".into()),
        ]));
        let mut client = Client::new(RetryPolicy::immediate(1));
        client.register("m", mock.clone(), 1);
        let store = ExchangeStore::in_memory();
        let req = ChatRequest::user("x");
        assert!(store.record_and_replay(&client, &ctx("a"), &req).is_err());
        assert!(store.is_empty());
        let r = store.record_and_replay(&client, &ctx("a"), &req).unwrap();
        assert_eq!(r.text(), Some("ok"));
    }
}
