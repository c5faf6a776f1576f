//! Deterministic offline provider.
//!
//! Chat answers come from a table of rules keyed by template id (matched on
//! slot substrings), then from registered handlers, then from a fallback
//! that emits the contract's neutral answer. Embeddings are hashed
//! bag-of-words vectors, so texts sharing words score higher; individual
//! texts can be pinned to exact vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::answer::AnswerContract;
use super::provider::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};
use super::templates::TemplateId;

pub const DEFAULT_STUB_DIMENSION: usize = 256;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubRule {
    /// Slot name → substring that must occur in the slot value.
    #[serde(default)]
    pub when: BTreeMap<String, String>,
    /// Only match on this reprompt count (0 = first attempt).
    #[serde(default)]
    pub attempt: Option<usize>,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubEmbeddings {
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Vec<f32>>,
}

/// On-disk fixture table for [`StubProvider`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubTable {
    #[serde(default)]
    pub chat: BTreeMap<String, Vec<StubRule>>,
    #[serde(default)]
    pub embeddings: StubEmbeddings,
}

impl StubTable {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: StubTable =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for key in table.chat.keys() {
            if TemplateId::parse(key).is_none() {
                return Err(format!("{}: unknown template id `{key}`", path.display()));
            }
        }
        Ok(table)
    }
}

type Handler = Arc<dyn Fn(&ChatRequest<'_>) -> Result<String, ProviderError> + Send + Sync>;

#[derive(Default)]
pub struct StubProvider {
    rules: BTreeMap<TemplateId, Vec<StubRule>>,
    handlers: HashMap<TemplateId, Handler>,
    dimension: usize,
    overrides: HashMap<String, Vec<f32>>,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    per_template: Mutex<BTreeMap<TemplateId, usize>>,
}

impl std::fmt::Debug for StubProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubProvider")
            .field("rules", &self.rules.len())
            .field("handlers", &self.handlers.len())
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl StubProvider {
    pub fn new() -> Self {
        Self {
            dimension: DEFAULT_STUB_DIMENSION,
            ..Default::default()
        }
    }

    pub fn from_table(table: StubTable) -> Self {
        let mut stub = Self::new();
        for (k, rules) in table.chat {
            if let Some(id) = TemplateId::parse(&k) {
                stub.rules.entry(id).or_default().extend(rules);
            }
        }
        if let Some(d) = table.embeddings.dimension {
            stub.dimension = d;
        }
        stub.overrides = table.embeddings.overrides.into_iter().collect();
        stub
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn with_rule(mut self, template: TemplateId, rule: StubRule) -> Self {
        self.rules.entry(template).or_default().push(rule);
        self
    }

    /// Shorthand for an unconditional rule.
    pub fn with_response(self, template: TemplateId, response: impl Into<String>) -> Self {
        self.with_rule(
            template,
            StubRule {
                response: response.into(),
                ..Default::default()
            },
        )
    }

    pub fn with_handler(
        mut self,
        template: TemplateId,
        f: impl Fn(&ChatRequest<'_>) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        self.handlers.insert(template, Arc::new(f));
        self
    }

    pub fn with_embedding(mut self, text: impl Into<String>, vector: Vec<f32>) -> Self {
        self.overrides.insert(text.into(), vector);
        self
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, template: TemplateId) -> usize {
        self.per_template.lock().unwrap().get(&template).copied().unwrap_or(0)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn matching_rule(&self, req: &ChatRequest<'_>) -> Option<&StubRule> {
        self.rules.get(&req.template)?.iter().find(|r| {
            r.attempt.is_none_or(|a| a == req.reprompts())
                && r.when.iter().all(|(slot, needle)| {
                    req.slots.get(slot).is_some_and(|v| v.contains(needle.as_str()))
                })
        })
    }

    /// Vector for one text under `model`: pinned override or hashed bag-of-words.
    pub fn vector_for(&self, model: &str, text: &str) -> Vec<f32> {
        if let Some(v) = self.overrides.get(text) {
            return v.clone();
        }
        hashed_bag_of_words(model, text, self.dimension)
    }
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing of word counts, L2-normalized. Empty text maps to the zero vector.
pub fn hashed_bag_of_words(model: &str, text: &str, dimension: usize) -> Vec<f32> {
    let mut v = vec![0f64; dimension.max(1)];
    for token in tokenize(text) {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(token.as_bytes());
        let d = h.finalize();
        let bucket = u64::from_le_bytes(d[..8].try_into().unwrap()) % v.len() as u64;
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter()
        .map(|x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 })
        .collect()
}

fn fallback(req: &ChatRequest<'_>) -> String {
    let t = req.template.template();
    match t.contract {
        AnswerContract::StringList
        | AnswerContract::PairList
        | AnswerContract::CodeWithDocs => "```\nNone\n```".into(),
        AnswerContract::TechniqueList => "```\n[]\n```".into(),
        AnswerContract::Boolean => "```\nFalse\n```".into(),
        AnswerContract::OptionalText => match req.template {
            TemplateId::RepoOverview => {
                let name = req.slots.get("name").map(String::as_str).unwrap_or("repository");
                let readme = req.slots.get("readme").map(String::as_str).unwrap_or("");
                let first = readme.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
                format!("```\n# {name}\n{}\n```", first.trim_start_matches('#').trim())
            }
            _ => "```\nNone\n```".into(),
        },
        AnswerContract::NumberList => {
            let scores: Vec<String> = req
                .slots
                .get("references")
                .map(String::as_str)
                .unwrap_or("")
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let d = Sha256::digest(l.as_bytes());
                    format!("{}", d[0] % 11)
                })
                .collect();
            format!("```\n[{}]\n```", scores.join(", "))
        }
    }
}

impl ChatProvider for StubProvider {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        *self.per_template.lock().unwrap().entry(req.template).or_default() += 1;
        if let Some(rule) = self.matching_rule(req) {
            return Ok(rule.response.clone());
        }
        if let Some(h) = self.handlers.get(&req.template) {
            return h(req);
        }
        Ok(fallback(req))
    }
}

impl EmbeddingProvider for StubProvider {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector_for(model, t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::templates::{slots, Slots};

    fn req<'a>(template: TemplateId, s: &'a Slots) -> ChatRequest<'a> {
        ChatRequest {
            model: "m",
            template,
            slots: s,
            messages: vec![],
        }
    }

    #[test]
    fn rules_match_on_slots() {
        let stub = StubProvider::new().with_rule(
            TemplateId::DecomposeTask,
            StubRule {
                when: [("description".to_string(), "loss".to_string())].into(),
                attempt: None,
                response: "```[(\"a\", \"b\")]```".into(),
            },
        );
        let hit = slots([("description", "a contrastive loss".into())]);
        let miss = slots([("description", "config only".into())]);
        assert!(stub.complete(&req(TemplateId::DecomposeTask, &hit)).unwrap().contains("(\"a\""));
        assert_eq!(stub.complete(&req(TemplateId::DecomposeTask, &miss)).unwrap(), "```\nNone\n```");
        assert_eq!(stub.chat_calls(), 2);
    }

    #[test]
    fn embeddings_are_deterministic_and_normalized() {
        let stub = StubProvider::new();
        let a = stub.vector_for("m", "Contrastive widget loss");
        assert_eq!(a, stub.vector_for("m", "contrastive WIDGET loss!"));
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(stub.vector_for("m", "").iter().all(|x| *x == 0.0));
        assert_ne!(a, stub.vector_for("other-model", "Contrastive widget loss"));
    }

    #[test]
    fn fallback_scores_are_hash_derived() {
        let stub = StubProvider::new();
        let s = slots([
            ("paper", "P".into()),
            ("abstract", "".into()),
            ("references", "1. A\n2. B\n".into()),
        ]);
        let a = stub.complete(&req(TemplateId::RankReferences, &s)).unwrap();
        let b = stub.complete(&req(TemplateId::RankReferences, &s)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches(',').count(), 1);
    }
}
