//! In-process provider for tests and `--mock` runs. Never touches the network.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{ChatRequest, Provider, ProviderError, ProviderOutput};

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync;

enum Behavior {
    Script(Mutex<VecDeque<Result<ProviderOutput, ProviderError>>>),
    Func(Box<ReplyFn>),
    Seeded(u64),
    EchoDecoding,
}

pub struct MockProvider {
    behavior: Behavior,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl MockProvider {
    fn with(behavior: Behavior) -> Self {
        Self {
            behavior,
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Replays the given outcomes in order; errors once exhausted.
    pub fn scripted(outcomes: Vec<Result<String, ProviderError>>) -> Self {
        Self::with(Behavior::Script(Mutex::new(
            outcomes.into_iter().map(|o| o.map(ProviderOutput::from)).collect(),
        )))
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self::with(Behavior::Func(Box::new(f)))
    }

    /// Reply text is a pure function of `(seed, request)`.
    pub fn seeded(seed: u64) -> Self {
        Self::with(Behavior::Seeded(seed))
    }

    /// Replies with the decoding parameters it received.
    pub fn echo_decoding() -> Self {
        Self::with(Behavior::EchoDecoding)
    }

    /// Holds each call open for `delay`, to make concurrency observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of concurrent calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub fn seeded_reply(seed: u64, request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_vec(request).unwrap_or_default());
    format!("mock reply {}", hex::encode(&h.finalize()[..8]))
}

impl Provider for MockProvider {
    fn call(&self, request: &ChatRequest) -> Result<ProviderOutput, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = match &self.behavior {
            Behavior::Script(queue) => queue
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .pop_front()
                .unwrap_or_else(|| Err(ProviderError::Malformed("mock script exhausted".into()))),
            Behavior::Func(f) => f(request).map(ProviderOutput::from),
            Behavior::Seeded(seed) => Ok(seeded_reply(*seed, request).into()),
            Behavior::EchoDecoding => Ok(format!(
                "max_tokens={:?} temperature={:?}",
                request.max_tokens, request.temperature
            )
            .into()),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
