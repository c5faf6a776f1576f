//! The agent-facing surface: a code-free planning view of a paper, and
//! threshold-gated retrieval of (technique, code) pairs with optional
//! verifier reranking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::normalize_title;
use crate::graph::{Category, CodeNode, Executability, Graph, PaperMetadata};
use crate::llm::{slots, Gateway, LlmError, TemplateId};
use crate::rag::cosine;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("paper `{0}` not found")]
    UnknownPaper(String),
    #[error("task description is empty")]
    EmptyTask,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStub {
    pub id: String,
    pub documentation: String,
    pub executable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningTechnique {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub definition: String,
    pub children: Vec<String>,
    pub code: Vec<CodeStub>,
}

/// A paper without code bodies: metadata, technique tree and code stubs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningView {
    pub paper_id: String,
    pub metadata: PaperMetadata,
    pub technique_roots: Vec<String>,
    /// Techniques in preorder.
    pub techniques: Vec<PlanningTechnique>,
    /// `(parent, child)` pairs.
    pub structural_edges: Vec<(String, String)>,
}

impl PlanningView {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("view serializes")
    }
}

pub fn fetch_planning_context(graph: &Graph, paper_id: &str) -> Result<PlanningView, QueryError> {
    let paper = graph.paper(paper_id).ok_or_else(|| QueryError::UnknownPaper(paper_id.to_owned()))?;
    let mut techniques = Vec::new();
    let mut structural_edges = Vec::new();
    for id in paper.preorder() {
        let t = &paper.techniques[id];
        for c in &t.children {
            structural_edges.push((t.id.clone(), c.clone()));
        }
        techniques.push(PlanningTechnique {
            id: t.id.clone(),
            name: t.name.clone(),
            category: t.category,
            definition: t.definition.clone(),
            children: t.children.clone(),
            code: t
                .code_refs
                .iter()
                .filter_map(|r| paper.code_registry.get(r))
                .map(|c| CodeStub {
                    id: c.id.clone(),
                    documentation: c.documentation.clone(),
                    executable: c.executable.into(),
                })
                .collect(),
        });
    }
    Ok(PlanningView {
        paper_id: paper.id.clone(),
        metadata: paper.metadata.clone(),
        technique_roots: paper.technique_roots.clone(),
        techniques,
        structural_edges,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct IndexedTechnique {
    paper_id: String,
    technique_id: String,
    name_vec: Vec<f32>,
    full_vec: Vec<f32>,
}

/// Embeddings of every grounded technique and of every paper abstract.
#[derive(Debug, Clone, PartialEq)]
pub struct KgIndex {
    model: String,
    techniques: Vec<IndexedTechnique>,
    papers: Vec<(String, Vec<f32>)>,
}

fn grounded_code<'g>(graph: &'g Graph, paper_id: &str, technique_id: &str) -> Option<&'g CodeNode> {
    let p = graph.paper(paper_id)?;
    let t = p.techniques.get(technique_id)?;
    t.code_refs
        .iter()
        .filter_map(|r| p.code_registry.get(r))
        .find(|c| c.executable != Executability::Failed)
}

/// The text embedded for a technique besides its name.
pub fn technique_text(name: &str, definition: &str) -> String {
    format!("{name}: {definition}")
}

impl KgIndex {
    /// Embeds the name and `name: definition` of each technique that has a
    /// grounded code node.
    pub fn build(graph: &Graph, gateway: &Gateway, model: &str) -> Result<Self, QueryError> {
        let mut keys = Vec::new();
        let mut texts = Vec::new();
        for p in graph.papers() {
            for t in p.techniques.values() {
                if grounded_code(graph, &p.id, &t.id).is_some() {
                    keys.push((p.id.clone(), t.id.clone()));
                    texts.push(t.name.clone());
                    texts.push(technique_text(&t.name, &t.definition));
                }
            }
        }
        let abstracts: Vec<(String, String)> = graph
            .papers()
            .map(|p| (p.id.clone(), format!("{}\n{}", p.metadata.title, p.metadata.abstract_text)))
            .collect();
        let n = texts.len();
        texts.extend(abstracts.iter().map(|(_, a)| a.clone()));
        let vectors = if texts.is_empty() { Vec::new() } else { gateway.embed_texts(model, &texts)? };
        let techniques = keys
            .into_iter()
            .enumerate()
            .map(|(i, (paper_id, technique_id))| IndexedTechnique {
                paper_id,
                technique_id,
                name_vec: vectors[2 * i].clone(),
                full_vec: vectors[2 * i + 1].clone(),
            })
            .collect();
        let papers = abstracts.into_iter().zip(vectors[n..].iter().cloned()).map(|((id, _), v)| (id, v)).collect();
        Ok(Self {
            model: model.to_owned(),
            techniques,
            papers,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.techniques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.techniques.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieveSettings {
    pub technique_similarity: f64,
    pub paper_similarity: f64,
    pub paper_prefilter: bool,
    pub max_hits: usize,
}

impl From<&crate::config::RetrieveConfig> for RetrieveSettings {
    fn from(c: &crate::config::RetrieveConfig) -> Self {
        Self {
            technique_similarity: c.technique_similarity,
            paper_similarity: c.paper_similarity,
            paper_prefilter: c.paper_prefilter,
            max_hits: c.max_hits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub technique_id: String,
    pub paper_id: String,
    pub name: String,
    pub definition: String,
    pub similarity: f64,
    pub code: Option<CodeNode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
}

/// Similarity of a query vector to one technique: the better of its name
/// alone and its name with definition.
fn technique_similarity(q: &[f32], t: &IndexedTechnique) -> f64 {
    cosine(q, &t.name_vec).max(cosine(q, &t.full_vec))
}

/// Techniques whose similarity to `query` reaches the threshold, most
/// similar first (ties by technique id), at most `max_hits`.
pub fn retrieve_implementations(
    graph: &Graph,
    index: &KgIndex,
    query: &str,
    settings: RetrieveSettings,
    gateway: &Gateway,
) -> Result<Vec<RetrievalHit>, QueryError> {
    if index.is_empty() || query.trim().is_empty() {
        return Ok(Vec::new());
    }
    let q = gateway.embed_texts(&index.model, &[query.to_owned()])?.remove(0);
    let allowed: Option<BTreeSet<&str>> = settings.paper_prefilter.then(|| {
        index
            .papers
            .iter()
            .filter(|(_, v)| cosine(&q, v) >= settings.paper_similarity)
            .map(|(id, _)| id.as_str())
            .collect()
    });
    let mut hits: Vec<RetrievalHit> = index
        .techniques
        .iter()
        .filter(|t| allowed.as_ref().is_none_or(|a| a.contains(t.paper_id.as_str())))
        .filter_map(|t| {
            let similarity = technique_similarity(&q, t);
            if similarity < settings.technique_similarity {
                return None;
            }
            let node = &graph.paper(&t.paper_id)?.techniques[&t.technique_id];
            Some(RetrievalHit {
                technique_id: t.technique_id.clone(),
                paper_id: t.paper_id.clone(),
                name: node.name.clone(),
                definition: node.definition.clone(),
                similarity,
                code: grounded_code(graph, &t.paper_id, &t.technique_id).cloned(),
                guidance: None,
            })
        })
        .collect();
    hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.technique_id.cmp(&b.technique_id)));
    hits.truncate(settings.max_hits);
    Ok(hits)
}

/// Splits a task into `(name, description)` technique queries, most important first.
pub fn decompose_task(description: &str, gateway: &Gateway) -> Result<Vec<(String, String)>, QueryError> {
    if description.trim().is_empty() {
        return Err(QueryError::EmptyTask);
    }
    Ok(gateway.chat_pairs(TemplateId::DecomposeTask, &slots([("description", description.to_owned())]))?)
}

/// Lets the verifier keep, order and annotate hits for the task at hand.
///
/// The result is a subset of `hits` in the verifier's order, each with
/// guidance. Names that match no hit are dropped with a warning, and hits
/// repeating an earlier kept name or definition are collapsed.
pub fn rerank_and_guide(hits: &[RetrievalHit], query_context: &str, gateway: &Gateway) -> Result<Vec<RetrievalHit>, QueryError> {
    if hits.is_empty() {
        return Ok(Vec::new());
    }
    let listing: String = hits
        .iter()
        .map(|h| {
            let doc = h.code.as_ref().map(|c| c.documentation.as_str()).unwrap_or_default();
            format!("- name: {}\n  definition: {}\n  code documentation: {}\n", h.name, h.definition, doc)
        })
        .collect();
    let picks = gateway.chat_pairs(
        TemplateId::RerankTechniques,
        &slots([("technique", query_context.to_owned()), ("relevant_techniques", listing)]),
    )?;
    let mut used = vec![false; hits.len()];
    let mut names = BTreeSet::new();
    let mut definitions = BTreeSet::new();
    let mut out = Vec::new();
    for (name, guidance) in picks {
        let Some(i) = (0..hits.len()).find(|&i| !used[i] && hits[i].name == name) else {
            log::warn!("verifier named unknown technique `{name}`; dropping it");
            continue;
        };
        used[i] = true;
        let h = &hits[i];
        if !names.insert(normalize_title(&h.name)) || !definitions.insert(normalize_title(&h.definition)) {
            log::debug!("collapsing duplicate technique `{}`", h.name);
            continue;
        }
        out.push(RetrievalHit {
            guidance: Some(guidance),
            ..h.clone()
        });
    }
    Ok(out)
}
