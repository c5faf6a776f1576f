pub mod codegen;
pub mod config;
pub mod curator;
pub mod extract;
pub mod graph;
pub mod llm;
pub mod pipeline;
pub mod query;
pub mod rag;
