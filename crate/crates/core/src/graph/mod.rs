//! The executable knowledge graph: paper, technique and code nodes linked by
//! structural (technique→technique) and implementation (technique→code) edges.
//!
//! A [`Graph`] is built under exclusive access and is read-only afterwards;
//! every query path takes `&Graph`.

mod ids;
pub(crate) mod model;
mod prune;
mod store;
mod validate;

use std::collections::BTreeMap;

use thiserror::Error;

pub use ids::{code_id, disambiguate, paper_id, slug, technique_id};
pub use model::{
    Category, CodeNode, Edge, EdgeKind, Executability, NodeRef, PaperMetadata, PaperNode,
    Provenance, TechniqueNode,
};
pub use prune::{grounded_set, prune_ungrounded, PruneReport};
pub use store::{
    load_paper, save_paper, GraphStore, Manifest, StoreError, MANIFEST_FILE, SCHEMA_VERSION,
};
pub use validate::{validate, Rule, Violation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("paper `{0}` already exists in the graph")]
    DuplicatePaper(String),
    #[error("paper `{0}` not found")]
    UnknownPaper(String),
    #[error("technique `{0}` is referenced but not defined")]
    UnknownTechnique(String),
    #[error("technique `{technique}` references missing code node `{code}`")]
    DanglingCodeRef { technique: String, code: String },
    #[error("technique tree has a cycle through `{0}`")]
    Cycle(String),
    #[error("technique `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("technique id `{0}` is already used by another paper")]
    DuplicateNodeId(String),
    #[error("invalid paper: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    papers: BTreeMap<String, PaperNode>,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn papers(&self) -> impl Iterator<Item = &PaperNode> {
        self.papers.values()
    }

    pub fn paper(&self, id: &str) -> Option<&PaperNode> {
        self.papers.get(id)
    }

    pub fn paper_count(&self) -> usize {
        self.papers.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Raw access to the materialized edge list; callers bypass every check.
    pub fn edges_mut(&mut self) -> &mut Vec<Edge> {
        &mut self.edges
    }

    /// Raw access to a stored paper; callers bypass every check.
    pub fn paper_mut(&mut self, id: &str) -> Option<&mut PaperNode> {
        self.papers.get_mut(id)
    }

    /// Sum of `source_tokens` over all papers.
    pub fn total_tokens(&self) -> u64 {
        self.papers.values().map(|p| p.metadata.source_tokens).sum()
    }

    pub fn resolve(&self, node_id: &str) -> Option<NodeRef<'_>> {
        if let Some(p) = self.papers.get(node_id) {
            return Some(NodeRef::Paper(p));
        }
        self.papers.values().find_map(|p| {
            p.techniques
                .get(node_id)
                .map(|t| NodeRef::Technique(p, t))
                .or_else(|| p.code_registry.get(node_id).map(|c| NodeRef::Code(p, c)))
        })
    }

    /// Inserts a paper assembled from its parts and materializes its edges.
    pub fn add_paper(
        &mut self,
        id: impl Into<String>,
        metadata: PaperMetadata,
        technique_roots: Vec<String>,
        techniques: Vec<TechniqueNode>,
        code_nodes: Vec<CodeNode>,
    ) -> Result<String, GraphError> {
        let mut paper = PaperNode::new(id, metadata);
        paper.technique_roots = technique_roots;
        for t in techniques {
            let id = t.id.clone();
            if paper.techniques.insert(id.clone(), t).is_some() {
                return Err(GraphError::DuplicateNodeId(id));
            }
        }
        for c in code_nodes {
            let id = c.id.clone();
            if paper.code_registry.insert(id.clone(), c).is_some() {
                return Err(GraphError::DuplicateNodeId(id));
            }
        }
        self.insert_paper(paper)
    }

    pub fn insert_paper(&mut self, paper: PaperNode) -> Result<String, GraphError> {
        if self.papers.contains_key(&paper.id) {
            return Err(GraphError::DuplicatePaper(paper.id));
        }
        self.check_insertable(&paper)?;
        Ok(self.commit(paper))
    }

    /// Replaces any existing paper with the same id.
    pub fn upsert_paper(&mut self, paper: PaperNode) -> Result<String, GraphError> {
        self.check_insertable(&paper)?;
        self.remove_paper(&paper.id);
        Ok(self.commit(paper))
    }

    pub fn remove_paper(&mut self, id: &str) -> Option<PaperNode> {
        let paper = self.papers.remove(id)?;
        self.edges.retain(|e| {
            !(paper.techniques.contains_key(&e.src) || paper.techniques.contains_key(&e.dst))
        });
        Some(paper)
    }

    fn check_insertable(&self, paper: &PaperNode) -> Result<(), GraphError> {
        if paper.metadata.title.trim().is_empty() {
            return Err(GraphError::Invalid(format!("paper `{}` has an empty title", paper.id)));
        }
        paper.check_structure()?;
        for other in self.papers.values().filter(|p| p.id != paper.id) {
            let clash = paper
                .techniques
                .keys()
                .chain(paper.code_registry.keys())
                .find(|k| other.techniques.contains_key(*k) || other.code_registry.contains_key(*k));
            if let Some(k) = clash {
                return Err(GraphError::DuplicateNodeId(k.clone()));
            }
        }
        Ok(())
    }

    fn commit(&mut self, paper: PaperNode) -> String {
        self.edges.extend(paper.derived_edges());
        let id = paper.id.clone();
        self.papers.insert(id.clone(), paper);
        id
    }

    /// Applies an in-place change to one paper and re-derives its edges.
    pub(crate) fn modify_paper<R>(
        &mut self,
        paper_id: &str,
        f: impl FnOnce(&mut PaperNode) -> R,
    ) -> Result<R, GraphError> {
        let paper = self
            .papers
            .get_mut(paper_id)
            .ok_or_else(|| GraphError::UnknownPaper(paper_id.to_owned()))?;
        let mut owned: std::collections::BTreeSet<String> = paper.techniques.keys().cloned().collect();
        let out = f(paper);
        owned.extend(paper.techniques.keys().cloned());
        let derived = paper.derived_edges();
        self.edges.retain(|e| !owned.contains(&e.src));
        self.edges.extend(derived);
        Ok(out)
    }
}
