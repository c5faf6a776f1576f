//! Provider abstraction: prompt templates, answer parsing, chat and
//! embedding providers, and the [`Gateway`] that routes calls by role.

pub mod answer;
mod gateway;
mod http;
pub mod literal;
mod provider;
mod stub;
pub mod templates;

pub use answer::{Answer, AnswerContract, CodeWithDocs, RawTechnique, TEST_BLOCK_MARKER};
pub use gateway::{Gateway, LlmError, LlmProfile, ModelRole, Usage};
pub use http::HttpProvider;
pub use provider::{
    ChatProvider, ChatRequest, EmbeddingProvider, Message, MessageRole, ProviderError,
};
pub use stub::{
    hashed_bag_of_words, tokenize, StubEmbeddings, StubProvider, StubRule, StubTable,
    DEFAULT_STUB_DIMENSION,
};
pub use templates::{slots, Slots, Template, TemplateId, TEMPLATES};
