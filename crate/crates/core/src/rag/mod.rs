//! Chunking, embedding and exact top-k cosine search shared by the paper
//! and code retrieval paths, plus the LLM file re-ranker.

mod chunk;
mod index;

use std::collections::BTreeSet;

use thiserror::Error;

pub use chunk::{split_document, split_text, Chunk};
pub use index::{build_index, cosine, EmbeddingVector, ScoredChunk, VectorIndex};

use crate::llm::{slots, Gateway, LlmError, TemplateId};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("chunk_size ({chunk_size}) must exceed overlap ({overlap})")]
    InvalidSplit { chunk_size: usize, overlap: usize },
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Context for the file re-ranking prompt.
#[derive(Debug, Clone, Copy)]
pub struct RerankContext<'a> {
    pub paper_title: &'a str,
    /// Technique name and definition as shown to the model.
    pub technique: &'a str,
    pub overview: &'a str,
}

/// Groups retrieved chunks by file, in order of each file's best rank.
pub fn group_by_file<'a>(hits: &[ScoredChunk<'a>]) -> Vec<(String, Vec<&'a Chunk>)> {
    let mut groups: Vec<(String, Vec<&Chunk>)> = Vec::new();
    for h in hits {
        let path = h.chunk.file_path.clone().unwrap_or_else(|| h.chunk.doc_id.clone());
        match groups.iter_mut().find(|(p, _)| *p == path) {
            Some((_, v)) => v.push(h.chunk),
            None => groups.push((path, vec![h.chunk])),
        }
    }
    groups
}

pub(crate) fn render_file_snippets(groups: &[(String, Vec<&Chunk>)]) -> String {
    let mut out = String::new();
    for (path, chunks) in groups {
        out.push_str(&format!("### File: {path}\n"));
        let mut sorted = chunks.clone();
        sorted.sort_by_key(|c| c.span.0);
        for c in sorted {
            out.push_str(&format!("[chars {}-{}]\n{}\n", c.span.0, c.span.1, c.text));
        }
        out.push('\n');
    }
    out
}

/// Asks the model which retrieved files implement the technique.
///
/// Returns at most `top_files` distinct paths, all drawn from the retrieved
/// chunks, in the model's order. Names the model invents are dropped.
pub fn select_top_files(
    hits: &[ScoredChunk<'_>],
    context: RerankContext<'_>,
    top_files: usize,
    gateway: &Gateway,
) -> Result<Vec<String>, RagError> {
    if top_files == 0 {
        return Err(RagError::InvalidTopK);
    }
    let groups = group_by_file(hits);
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let known: BTreeSet<&str> = groups.iter().map(|(p, _)| p.as_str()).collect();
    let answer = gateway.chat_strings(
        TemplateId::RelevantCode,
        &slots([
            ("paper", context.paper_title.to_owned()),
            ("technique", context.technique.to_owned()),
            ("overview", context.overview.to_owned()),
            ("file_snippets", render_file_snippets(&groups)),
        ]),
    )?;
    let mut out: Vec<String> = Vec::new();
    for name in answer {
        let name = name.trim();
        if !known.contains(name) {
            log::warn!("re-ranker named unknown file `{name}`; ignoring");
            continue;
        }
        if !out.iter().any(|o| o == name) {
            out.push(name.to_owned());
        }
        if out.len() == top_files {
            break;
        }
    }
    Ok(out)
}
