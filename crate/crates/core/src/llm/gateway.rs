use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::answer::Answer;
use super::provider::{
    ChatProvider, ChatRequest, EmbeddingProvider, Message, MessageRole, ProviderError,
};
use super::templates::{render_full, RenderError, Slots, TemplateId};

/// Which model of a profile serves a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Core reasoning model.
    Model,
    /// Extraction and rewriting of techniques from papers.
    Paper,
    /// Code rewriting and debugging.
    Code,
    /// Retrieval verifier; falls back to the paper model.
    Verifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmProfile {
    pub name: String,
    pub model: String,
    pub paper_model: String,
    pub code_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_model: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Requests per second; absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_sec: Option<f64>,
    #[serde(default = "default_burst")]
    pub burst: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_retries() -> u32 {
    2
}
fn default_timeout() -> u64 {
    120
}
fn default_burst() -> u32 {
    4
}
fn default_backoff() -> u64 {
    500
}

impl Default for LlmProfile {
    fn default() -> Self {
        Self {
            name: "basic-deepseek-v3".into(),
            model: "DeepSeek-V3".into(),
            paper_model: "o4-mini".into(),
            code_model: "o4-mini".into(),
            verifier_model: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            rate_per_sec: None,
            burst: default_burst(),
            retry_backoff_ms: default_backoff(),
        }
    }
}

impl LlmProfile {
    pub fn model_for(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Model => &self.model,
            ModelRole::Paper => &self.paper_model,
            ModelRole::Code => &self.code_model,
            ModelRole::Verifier => self.verifier_model.as_deref().unwrap_or(&self.paper_model),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let ids = [
            ("model", self.model.as_str()),
            ("paper_model", self.paper_model.as_str()),
            ("code_model", self.code_model.as_str()),
            ("verifier_model", self.verifier_model.as_deref().unwrap_or("x")),
        ];
        for (k, v) in ids {
            if v.trim().is_empty() {
                return Err(format!("profile `{}`: `{k}` must be nonempty", self.name));
            }
        }
        if self.rate_per_sec.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return Err(format!("profile `{}`: `rate_per_sec` must be positive", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{template}: provider failed after {attempts} attempt(s): {source}")]
    Provider {
        template: String,
        attempts: usize,
        #[source]
        source: ProviderError,
    },
    #[error("{template}: answer violates its contract after a reprompt: {message}")]
    Contract { template: TemplateId, message: String },
    #[error("{template}: expected a {expected} answer")]
    UnexpectedAnswer {
        template: TemplateId,
        expected: &'static str,
    },
    #[error("embedding request has no texts")]
    EmptyInput,
    #[error("embedding model `{model}` returned dimension {found}, expected {expected}")]
    DimensionMismatch {
        model: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding model `{model}` returned {found} vectors for {expected} texts")]
    CountMismatch {
        model: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding model `{0}` returned a non-finite value")]
    NonFinite(String),
}

impl LlmError {
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, LlmError::Provider { .. })
    }
}

/// Token bucket shared by every call made through one gateway.
#[derive(Debug)]
struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap();
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.rate)
            };
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub chat_calls: u64,
    pub prompt_bytes: u64,
    pub response_bytes: u64,
    pub embed_calls: u64,
    pub embedded_texts: u64,
    pub embed_cache_hits: u64,
}

type CacheKey = (String, [u8; 32]);

/// Shared entry point for chat and embedding calls.
///
/// Safe to share across threads; rate limiting is the only point of
/// contention and no lock is held while waiting on the network.
pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    profile: LlmProfile,
    limiter: Option<TokenBucket>,
    embed_batch: usize,
    cache: Mutex<HashMap<CacheKey, Vec<f32>>>,
    dims: Mutex<HashMap<String, usize>>,
    usage: Mutex<Usage>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("profile", &self.profile.name)
            .field("embed_batch", &self.embed_batch)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
        profile: LlmProfile,
    ) -> Self {
        let limiter = profile.rate_per_sec.map(|r| TokenBucket::new(r, profile.burst));
        Self {
            chat,
            embedder,
            profile,
            limiter,
            embed_batch: 32,
            cache: Mutex::new(HashMap::new()),
            dims: Mutex::new(HashMap::new()),
            usage: Mutex::new(Usage::default()),
        }
    }

    /// Gateway whose chat and embedding calls both go to one provider.
    pub fn single<P: ChatProvider + EmbeddingProvider + 'static>(provider: Arc<P>, profile: LlmProfile) -> Self {
        Self::new(provider.clone(), provider, profile)
    }

    pub fn with_embed_batch(mut self, batch: usize) -> Self {
        self.embed_batch = batch.max(1);
        self
    }

    pub fn profile(&self) -> &LlmProfile {
        &self.profile
    }

    pub fn usage(&self) -> Usage {
        *self.usage.lock().unwrap()
    }

    fn throttle(&self) {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
    }

    fn backoff(&self, attempt: u32) {
        let ms = self.profile.retry_backoff_ms.saturating_mul(1 << attempt.min(6));
        if ms > 0 {
            thread::sleep(Duration::from_millis(ms));
        }
    }

    /// Renders a template, calls the provider for the template's role and
    /// parses the final fenced answer.
    ///
    /// Transport errors are retried up to `max_retries` times; a reply that
    /// violates the answer contract gets exactly one corrective reprompt.
    pub fn chat(&self, template_id: TemplateId, slots: &Slots) -> Result<Answer, LlmError> {
        let template = template_id.template();
        let prompt = render_full(template, slots)?;
        let model = self.profile.model_for(template.role);
        let mut messages = vec![Message {
            role: MessageRole::User,
            content: prompt,
        }];
        let mut retries_left = self.profile.max_retries;
        let mut reprompted = false;
        let mut attempts = 0;
        loop {
            self.throttle();
            attempts += 1;
            let req = ChatRequest {
                model,
                template: template_id,
                slots,
                messages: messages.clone(),
            };
            let result = self.chat.complete(&req);
            {
                let mut u = self.usage.lock().unwrap();
                u.chat_calls += 1;
                u.prompt_bytes += messages.iter().map(|m| m.content.len() as u64).sum::<u64>();
                if let Ok(text) = &result {
                    u.response_bytes += text.len() as u64;
                }
            }
            match result {
                Err(e) if e.is_retryable() && retries_left > 0 => {
                    log::warn!("{template_id}: {e}; retrying");
                    self.backoff(self.profile.max_retries - retries_left);
                    retries_left -= 1;
                }
                Err(source) => {
                    return Err(LlmError::Provider {
                        template: template_id.to_string(),
                        attempts,
                        source,
                    })
                }
                Ok(text) => match template.contract.parse(&text) {
                    Ok(answer) => return Ok(answer),
                    Err(message) if !reprompted => {
                        log::debug!("{template_id}: contract violation ({message}); reprompting");
                        reprompted = true;
                        messages.push(Message {
                            role: MessageRole::Assistant,
                            content: text,
                        });
                        messages.push(Message {
                            role: MessageRole::User,
                            content: format!(
                                "Your reply could not be used: {message}. Answer again, ending with {} between two ``` markers.",
                                template.contract.describe()
                            ),
                        });
                    }
                    Err(message) => {
                        return Err(LlmError::Contract {
                            template: template_id,
                            message,
                        })
                    }
                },
            }
        }
    }

    /// Embeds texts with `model`, one vector per text in input order.
    ///
    /// Vectors are cached by (model, content hash). Misses are sent in
    /// batches; nothing is cached unless every batch succeeds.
    pub fn embed_texts(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmptyInput);
        }
        let keys: Vec<CacheKey> = texts
            .iter()
            .map(|t| (model.to_owned(), Sha256::digest(t.as_bytes()).into()))
            .collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut queued = std::collections::HashSet::new();
            for (i, k) in keys.iter().enumerate() {
                if !cache.contains_key(k) && queued.insert(k.clone()) {
                    missing.push(i);
                }
            }
        }
        let batch = self.embed_batch.min(self.embedder.max_batch()).max(1);
        let mut fresh: Vec<(CacheKey, Vec<f32>)> = Vec::with_capacity(missing.len());
        let mut expected_dim = self.dims.lock().unwrap().get(model).copied();
        for group in missing.chunks(batch) {
            let inputs: Vec<String> = group.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.embed_batch_with_retry(model, &inputs)?;
            if vectors.len() != inputs.len() {
                return Err(LlmError::CountMismatch {
                    model: model.to_owned(),
                    expected: inputs.len(),
                    found: vectors.len(),
                });
            }
            for (&i, v) in group.iter().zip(vectors) {
                let dim = *expected_dim.get_or_insert(v.len());
                if v.len() != dim {
                    return Err(LlmError::DimensionMismatch {
                        model: model.to_owned(),
                        expected: dim,
                        found: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(LlmError::NonFinite(model.to_owned()));
                }
                fresh.push((keys[i].clone(), v));
            }
        }
        let mut cache = self.cache.lock().unwrap();
        if let Some(d) = expected_dim {
            self.dims.lock().unwrap().insert(model.to_owned(), d);
        }
        let hits = (texts.len() - fresh.len()) as u64;
        cache.extend(fresh);
        self.usage.lock().unwrap().embed_cache_hits += hits;
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    fn embed_batch_with_retry(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        let mut retries_left = self.profile.max_retries;
        let mut attempts = 0;
        loop {
            self.throttle();
            attempts += 1;
            {
                let mut u = self.usage.lock().unwrap();
                u.embed_calls += 1;
                u.embedded_texts += inputs.len() as u64;
            }
            match self.embedder.embed(model, inputs) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && retries_left > 0 => {
                    self.backoff(self.profile.max_retries - retries_left);
                    retries_left -= 1;
                }
                Err(source) => {
                    return Err(LlmError::Provider {
                        template: format!("embed:{model}"),
                        attempts,
                        source,
                    })
                }
            }
        }
    }

    /// Chat call expecting a list of strings.
    pub fn chat_strings(&self, t: TemplateId, slots: &Slots) -> Result<Vec<String>, LlmError> {
        match self.chat(t, slots)? {
            Answer::Strings(v) => Ok(v),
            _ => Err(LlmError::UnexpectedAnswer { template: t, expected: "string list" }),
        }
    }

    pub fn chat_text(&self, t: TemplateId, slots: &Slots) -> Result<Option<String>, LlmError> {
        match self.chat(t, slots)? {
            Answer::Text(v) => Ok(v),
            _ => Err(LlmError::UnexpectedAnswer { template: t, expected: "text" }),
        }
    }

    pub fn chat_pairs(&self, t: TemplateId, slots: &Slots) -> Result<Vec<(String, String)>, LlmError> {
        match self.chat(t, slots)? {
            Answer::Pairs(v) => Ok(v),
            _ => Err(LlmError::UnexpectedAnswer { template: t, expected: "pair list" }),
        }
    }

    pub fn chat_bool(&self, t: TemplateId, slots: &Slots) -> Result<bool, LlmError> {
        match self.chat(t, slots)? {
            Answer::Bool(v) => Ok(v),
            _ => Err(LlmError::UnexpectedAnswer { template: t, expected: "boolean" }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::stub::StubProvider;
    use crate::llm::templates::slots;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn profile(retries: u32) -> LlmProfile {
        LlmProfile {
            max_retries: retries,
            retry_backoff_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn routes_roles_to_models() {
        let p = LlmProfile {
            verifier_model: None,
            ..Default::default()
        };
        assert_eq!(p.model_for(ModelRole::Verifier), "o4-mini");
        assert_eq!(p.model_for(ModelRole::Model), "DeepSeek-V3");
        assert!(LlmProfile { model: " ".into(), ..Default::default() }.check().is_err());
    }

    #[test]
    fn bbl_routing() {
        let stub = Arc::new(
            StubProvider::new()
                .with_response(TemplateId::ExtractReferences, "```[\"A\", \"B\"]```"),
        );
        let gw = Gateway::single(stub.clone(), profile(0));
        let got = gw.chat_strings(TemplateId::ExtractReferences, &slots([("bbl", "\\bibitem{a}".into())]));
        assert_eq!(got.unwrap(), vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn unbound_slot_makes_no_call() {
        let stub = Arc::new(StubProvider::new());
        let gw = Gateway::single(stub.clone(), profile(0));
        assert!(matches!(gw.chat(TemplateId::ExtractReferences, &Slots::new()), Err(LlmError::Render(_))));
        assert_eq!(stub.chat_calls(), 0);
    }

    #[test]
    fn prose_without_fence_reprompts_once() {
        let stub = Arc::new(StubProvider::new().with_response(TemplateId::VerifyCode, "Looks right to me."));
        let gw = Gateway::single(stub.clone(), profile(3));
        let s = slots([
            ("paper", "P".into()),
            ("technique", "T".into()),
            ("file_snippets", "".into()),
            ("code", "".into()),
        ]);
        assert!(matches!(gw.chat(TemplateId::VerifyCode, &s), Err(LlmError::Contract { .. })));
        assert_eq!(stub.chat_calls(), 2);
    }

    #[test]
    fn reprompt_sees_previous_reply() {
        let stub = Arc::new(StubProvider::new().with_handler(TemplateId::DecomposeTask, |req| {
            Ok(if req.reprompts() == 0 { "no fence".into() } else { "```None```".into() })
        }));
        let gw = Gateway::single(stub.clone(), profile(0));
        let got = gw.chat_pairs(TemplateId::DecomposeTask, &slots([("description", "x".into())]));
        assert_eq!(got.unwrap(), vec![]);
        assert_eq!(stub.chat_calls(), 2);
    }

    #[test]
    fn attempts_are_bounded() {
        let count = Arc::new(AtomicUsize::new(0));
        let c = count.clone();
        let stub = Arc::new(StubProvider::new().with_handler(TemplateId::DecomposeTask, move |req| {
            let n = c.fetch_add(1, Ordering::SeqCst);
            if req.reprompts() == 0 && n.is_multiple_of(2) {
                Err(ProviderError::Transport("reset".into()))
            } else if req.reprompts() == 0 {
                Ok("prose".into())
            } else {
                Err(ProviderError::Transport("reset".into()))
            }
        }));
        let gw = Gateway::single(stub, profile(2));
        let err = gw.chat(TemplateId::DecomposeTask, &slots([("description", "x".into())])).unwrap_err();
        assert!(err.is_provider_failure());
        assert!(count.load(Ordering::SeqCst) <= 1 + 2 + 1);
    }

    #[test]
    fn rejected_is_not_retried() {
        let stub = Arc::new(StubProvider::new().with_handler(TemplateId::DecomposeTask, |_| {
            Err(ProviderError::Rejected("bad key".into()))
        }));
        let gw = Gateway::single(stub.clone(), profile(5));
        assert!(gw.chat(TemplateId::DecomposeTask, &slots([("description", "x".into())])).is_err());
        assert_eq!(stub.chat_calls(), 1);
    }

    #[test]
    fn embedding_batches_and_cache() {
        let stub = Arc::new(StubProvider::new().with_dimension(8));
        let gw = Gateway::single(stub.clone(), profile(0)).with_embed_batch(32);
        let texts: Vec<String> = (0..100).map(|i| format!("text number {i}")).collect();
        let v = gw.embed_texts("m", &texts).unwrap();
        assert_eq!(v.len(), 100);
        assert_eq!(stub.embed_calls(), 4);
        assert_eq!(v[7], stub.vector_for("m", "text number 7"));
        gw.embed_texts("m", &texts).unwrap();
        assert_eq!(stub.embed_calls(), 4);
        assert_eq!(gw.usage().embed_cache_hits, 100);
    }

    #[test]
    fn identical_texts_identical_vectors() {
        let gw = Gateway::single(Arc::new(StubProvider::new()), profile(0));
        let v = gw.embed_texts("m", &["same".into(), "same".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert!(matches!(gw.embed_texts("m", &[]), Err(LlmError::EmptyInput)));
    }

    struct Drifting;
    impl EmbeddingProvider for Drifting {
        fn embed(&self, _: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(texts.iter().enumerate().map(|(i, _)| vec![1.0; if i == 1 { 3 } else { 2 }]).collect())
        }
    }

    #[test]
    fn dimension_drift_is_an_error() {
        let gw = Gateway::new(Arc::new(StubProvider::new()), Arc::new(Drifting), profile(0));
        let err = gw.embed_texts("m", &["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, LlmError::DimensionMismatch { expected: 2, found: 3, .. }));
        // Nothing from the failed call was cached.
        assert_eq!(gw.cache.lock().unwrap().len(), 0);
    }

    #[test]
    fn token_bucket_limits_rate() {
        let bucket = TokenBucket::new(50.0, 1);
        let start = Instant::now();
        for _ in 0..6 {
            bucket.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(90));
    }
}
