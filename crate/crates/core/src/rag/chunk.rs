use serde::{Deserialize, Serialize};

use super::RagError;

/// A character span of a source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub file_path: Option<String>,
    /// `[start_char, end_char)` in characters, not bytes.
    pub span: (usize, usize),
    pub text: String,
}

impl Chunk {
    pub fn start(&self) -> usize {
        self.span.0
    }

    pub fn end(&self) -> usize {
        self.span.1
    }
}

/// Splits `text` into windows of `chunk_size` characters that overlap by
/// exactly `overlap` characters. The last window may be shorter.
pub fn split_text(text: &str, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, RagError> {
    split_document("", None, text, chunk_size, overlap)
}

pub fn split_document(
    doc_id: &str,
    file_path: Option<&str>,
    text: &str,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, RagError> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(RagError::InvalidSplit { chunk_size, overlap });
    }
    // Byte offset of every char boundary, including the end.
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let len = bounds.len() - 1;
    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + chunk_size).min(len);
        chunks.push(Chunk {
            doc_id: doc_id.to_owned(),
            file_path: file_path.map(str::to_owned),
            span: (start, end),
            text: text[bounds[start]..bounds[end]].to_owned(),
        });
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}
