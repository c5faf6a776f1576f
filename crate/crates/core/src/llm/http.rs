//! OpenAI-compatible chat-completion and embedding endpoints over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::provider::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

#[derive(Clone)]
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    embed_batch: usize,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // The key is never printed.
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("has_key", &self.api_key.is_some())
            .finish()
    }
}

impl HttpProvider {
    /// `api_key_env` names the environment variable holding the bearer token.
    pub fn new(base_url: &str, api_key_env: &str, timeout: Duration, embed_batch: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            agent,
            embed_batch: embed_batch.max(1),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(serde_json::to_vec(body).expect("request body serializes"))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ProviderError::Transport(format!("invalid JSON from {path}: {e}"))),
            408 | 429 | 500..=599 => Err(ProviderError::Transport(format!("{path} returned {status}"))),
            _ => Err(ProviderError::Rejected(format!("{path} returned {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ProviderError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let body = json!({"model": request.model, "messages": messages});
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()))
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let v = self.post("embeddings", &json!({"model": model, "input": texts}))?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Transport("embedding response has no data array".into()))?;
        let mut out: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderError::Transport("embedding item has no vector".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| ProviderError::Transport("embedding has non-numeric values".into()))?;
            out.push((index, vec));
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, v)| v).collect())
    }

    fn max_batch(&self) -> usize {
        self.embed_batch
    }
}
