use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Chunk, RagError};
use crate::llm::Gateway;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

/// Cosine similarity accumulated in f64; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk<'a> {
    pub chunk: &'a Chunk,
    pub similarity: f64,
}

/// Exact-search vector index. Built once, then read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    model_id: String,
    entries: Vec<(Chunk, EmbeddingVector)>,
}

impl VectorIndex {
    pub fn empty(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            entries: Vec::new(),
        }
    }

    /// Builds an index from precomputed vectors, checking they agree in dimension.
    pub fn from_vectors(
        model_id: impl Into<String>,
        items: Vec<(Chunk, Vec<f32>)>,
    ) -> Result<Self, RagError> {
        let model_id = model_id.into();
        let mut dim = None;
        let mut entries = Vec::with_capacity(items.len());
        for (chunk, values) in items {
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(RagError::DimensionMismatch {
                    expected: d,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(RagError::NonFinite);
            }
            entries.push((
                chunk,
                EmbeddingVector {
                    values,
                    model_id: model_id.clone(),
                },
            ));
        }
        Ok(Self { model_id, entries })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.entries.first().map(|(_, v)| v.values.len())
    }

    pub fn entries(&self) -> &[(Chunk, EmbeddingVector)] {
        &self.entries
    }

    /// Top `top_k` chunks by cosine similarity to `query`, most similar first.
    /// Ties are ordered by `(file_path, start_char)`, then insertion order.
    pub fn search(&self, query: &[f32], top_k: usize) -> Result<Vec<ScoredChunk<'_>>, RagError> {
        if top_k == 0 {
            return Err(RagError::InvalidTopK);
        }
        if let Some(d) = self.dimension() {
            if d != query.len() {
                return Err(RagError::DimensionMismatch {
                    expected: d,
                    found: query.len(),
                });
            }
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (_, v))| (i, cosine(&v.values, query)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            let (ca, cb) = (&self.entries[a.0].0, &self.entries[b.0].0);
            b.1.total_cmp(&a.1)
                .then_with(|| ca.file_path.cmp(&cb.file_path))
                .then_with(|| ca.span.0.cmp(&cb.span.0))
                .then_with(|| a.0.cmp(&b.0))
        };
        if scored.len() > top_k {
            scored.select_nth_unstable_by(top_k - 1, cmp);
            scored.truncate(top_k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(i, similarity)| ScoredChunk {
                chunk: &self.entries[i].0,
                similarity,
            })
            .collect())
    }

    /// Embeds `query_text` with the index's model and searches.
    pub fn query(
        &self,
        gateway: &Gateway,
        query_text: &str,
        top_k: usize,
    ) -> Result<Vec<ScoredChunk<'_>>, RagError> {
        if top_k == 0 {
            return Err(RagError::InvalidTopK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = gateway.embed_texts(&self.model_id, &[query_text.to_owned()])?;
        self.search(&q[0], top_k)
    }
}

/// Embeds every chunk and builds an index. Either the whole index is built or nothing is.
pub fn build_index(chunks: Vec<Chunk>, gateway: &Gateway, model_id: &str) -> Result<VectorIndex, RagError> {
    if chunks.is_empty() {
        return Ok(VectorIndex::empty(model_id));
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = gateway.embed_texts(model_id, &texts)?;
    VectorIndex::from_vectors(model_id, chunks.into_iter().zip(vectors).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmProfile, StubProvider};
    use std::sync::Arc;

    fn chunk(path: &str, start: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: "d".into(),
            file_path: Some(path.into()),
            span: (start, start + text.chars().count().max(1)),
            text: text.into(),
        }
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_on_path_then_start() {
        let idx = VectorIndex::from_vectors(
            "m",
            vec![
                (chunk("b.py", 0, "x"), vec![1.0, 0.0]),
                (chunk("a.py", 10, "y"), vec![2.0, 0.0]),
                (chunk("a.py", 5, "z"), vec![3.0, 0.0]),
                (chunk("a.py", 0, "w"), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let hits = idx.search(&[1.0, 0.0], 3).unwrap();
        let order: Vec<(&str, usize)> = hits
            .iter()
            .map(|h| (h.chunk.file_path.as_deref().unwrap(), h.chunk.span.0))
            .collect();
        assert_eq!(order, vec![("a.py", 5), ("a.py", 10), ("b.py", 0)]);
    }

    #[test]
    fn self_query_ranks_first() {
        let gw = Gateway::single(Arc::new(StubProvider::new()), LlmProfile::default());
        let chunks = vec![
            chunk("a.py", 0, "def widget_encoder(x): return x"),
            chunk("b.py", 0, "def gizmo_update(p, g): return p - g"),
            chunk("c.py", 0, "print('hello world')"),
        ];
        let idx = build_index(chunks, &gw, "emb").unwrap();
        assert_eq!(idx.len(), 3);
        let hits = idx.query(&gw, "def gizmo_update(p, g): return p - g", 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].chunk.file_path.as_deref(), Some("b.py"));
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_index_and_bad_k() {
        let gw = Gateway::single(Arc::new(StubProvider::new()), LlmProfile::default());
        let idx = build_index(vec![], &gw, "emb").unwrap();
        assert!(idx.query(&gw, "anything", 5).unwrap().is_empty());
        assert!(matches!(idx.query(&gw, "anything", 0), Err(RagError::InvalidTopK)));
    }

    #[test]
    fn fewer_entries_than_k() {
        let idx = VectorIndex::from_vectors(
            "m",
            (0..3).map(|i| (chunk("p", i, "t"), vec![1.0, i as f32])).collect(),
        )
        .unwrap();
        assert_eq!(idx.search(&[1.0, 1.0], 5).unwrap().len(), 3);
    }
}
