use thiserror::Error;

use super::templates::{Slots, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageRole {
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        }
    }
}

/// One chat-completion call. Remote providers only look at `model` and
/// `messages`; the template id and slot values ride along so offline
/// providers can answer without parsing prompt text.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub template: TemplateId,
    pub slots: &'a Slots,
    pub messages: Vec<Message>,
}

impl ChatRequest<'_> {
    /// Number of assistant turns already in the conversation (0 on the first attempt).
    pub fn reprompts(&self) -> usize {
        self.messages.iter().filter(|m| m.role == MessageRole::Assistant).count()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    /// Network or server-side failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The provider refused the request; retrying will not help.
    #[error("request rejected: {0}")]
    Rejected(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Embeds a batch; the response has one vector per input, in order.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    /// Largest batch the provider accepts in one call.
    fn max_batch(&self) -> usize {
        32
    }
}
