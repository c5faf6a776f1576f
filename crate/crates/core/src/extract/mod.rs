//! Technique extraction: turn a paper's LaTeX into a technique tree, then
//! enrich each definition with excerpts retrieved from the paper itself.

mod latex;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{
    disambiguate, technique_id, validate, Category, Graph, PaperMetadata, PaperNode, Rule,
    TechniqueNode, Violation,
};
use crate::llm::{slots, Answer, Gateway, LlmError, RawTechnique, TemplateId};
use crate::rag::{build_index, split_document, RagError, VectorIndex};

pub use latex::{
    extract_equations, inline_includes, parse_paper, segment_sections, strip_comments, PaperText,
    Section,
};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("extracted tree is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Techniques of one paper with ids assigned, before code is attached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TechniqueTree {
    pub roots: Vec<String>,
    pub techniques: BTreeMap<String, TechniqueNode>,
}

impl TechniqueTree {
    pub fn len(&self) -> usize {
        self.techniques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.techniques.is_empty()
    }

    pub fn into_paper(self, paper_id: &str, metadata: PaperMetadata) -> PaperNode {
        let mut p = PaperNode::new(paper_id, metadata);
        p.technique_roots = self.roots;
        p.techniques = self.techniques;
        p
    }

    /// Ids in preorder.
    pub fn preorder(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack: Vec<&str> = self.roots.iter().rev().map(String::as_str).collect();
        while let Some(id) = stack.pop() {
            out.push(id.to_owned());
            if let Some(t) = self.techniques.get(id) {
                stack.extend(t.children.iter().rev().map(String::as_str));
            }
        }
        out
    }

    /// Ids with every child before its parent (reversed preorder).
    pub fn children_first(&self) -> Vec<String> {
        let mut v = self.preorder();
        v.reverse();
        v
    }
}

/// Builds the tree from the model's nested answer.
///
/// Components deeper than `max_depth` levels are dropped with a warning.
/// A Finding or Resource with components, or an unknown category, makes
/// the whole answer invalid.
pub fn assemble_tree(paper_id: &str, raw: &[RawTechnique], max_depth: usize) -> Result<TechniqueTree, ExtractError> {
    let mut violations = Vec::new();
    let mut tree = TechniqueTree::default();
    let mut taken = BTreeSet::new();

    fn add(
        paper_id: &str,
        r: &RawTechnique,
        depth: usize,
        max_depth: usize,
        tree: &mut TechniqueTree,
        taken: &mut BTreeSet<String>,
        violations: &mut Vec<Violation>,
    ) -> Option<String> {
        let name = r.name.trim();
        let Some(category) = Category::parse(&r.kind) else {
            violations.push(Violation {
                subject: format!("{name} (category `{}`)", r.kind),
                rule: Rule::UnknownTechnique,
            });
            return None;
        };
        if name.is_empty() {
            violations.push(Violation {
                subject: format!("unnamed {category}"),
                rule: Rule::EmptyTechniqueName,
            });
            return None;
        }
        if !category.may_have_children() && !r.components.is_empty() {
            violations.push(Violation {
                subject: name.to_owned(),
                rule: Rule::NonImplementableHasChildren,
            });
            return None;
        }
        let id = disambiguate(technique_id(paper_id, name), taken);
        let mut node = TechniqueNode::new(id.clone(), name, category, r.description.trim());
        if depth == max_depth && !r.components.is_empty() {
            log::warn!("`{name}`: dropping {} component(s) beyond depth {max_depth}", r.components.len());
        } else {
            node.children = r
                .components
                .iter()
                .filter_map(|c| add(paper_id, c, depth + 1, max_depth, tree, taken, violations))
                .collect();
        }
        tree.techniques.insert(id.clone(), node);
        Some(id)
    }

    for r in raw {
        if let Some(id) = add(paper_id, r, 1, max_depth.max(1), &mut tree, &mut taken, &mut violations) {
            tree.roots.push(id);
        }
    }
    if !violations.is_empty() {
        return Err(ExtractError::Invalid(violations));
    }
    // The tree must be valid on its own before it can enter a graph.
    let mut g = Graph::new();
    let paper = tree.clone().into_paper(paper_id, PaperMetadata::new("draft"));
    if let Err(e) = g.insert_paper(paper) {
        return Err(ExtractError::Invalid(vec![Violation {
            subject: e.to_string(),
            rule: Rule::Unreachable,
        }]));
    }
    let v = validate(&g);
    if !v.is_empty() {
        return Err(ExtractError::Invalid(v));
    }
    Ok(tree)
}

/// Asks the model for the paper's technique tree.
///
/// A paper without body text yields an empty tree and costs no model call.
pub fn extract_techniques(
    paper_id: &str,
    paper: &PaperText,
    gateway: &Gateway,
    max_depth: usize,
) -> Result<TechniqueTree, ExtractError> {
    if !paper.has_body() {
        return Ok(TechniqueTree::default());
    }
    let answer = gateway.chat(
        TemplateId::ExtractTechniques,
        &slots([
            ("title", paper.title.clone()),
            ("sections", paper.render_sections()),
            ("equations", paper.render_equations()),
        ]),
    )?;
    let Answer::Techniques(raw) = answer else {
        return Err(LlmError::UnexpectedAnswer {
            template: TemplateId::ExtractTechniques,
            expected: "technique list",
        }
        .into());
    };
    assemble_tree(paper_id, &raw, max_depth)
}

/// Chunks and embeds the paper's own text for enrichment queries.
pub fn build_paper_index(
    paper_id: &str,
    paper: &PaperText,
    gateway: &Gateway,
    model: &str,
    chunk_size: usize,
    overlap: usize,
) -> Result<VectorIndex, ExtractError> {
    let chunks = split_document(paper_id, None, &paper.render_sections(), chunk_size, overlap)?;
    Ok(build_index(chunks, gateway, model)?)
}

#[derive(Debug, Clone, Copy)]
pub struct EnrichSettings<'a> {
    pub paper_title: &'a str,
    pub top_k: usize,
    /// Excerpts below this cosine similarity are not shown to the model.
    pub min_similarity: f64,
}

/// Rewrites the definition using the most similar excerpts of the paper.
///
/// Returns whether the definition changed. The first pre-enrichment
/// definition is kept in `original_definition`. Name and category are never
/// touched.
pub fn enrich_definition(
    technique: &mut TechniqueNode,
    index: &VectorIndex,
    gateway: &Gateway,
    settings: EnrichSettings<'_>,
) -> Result<bool, ExtractError> {
    if index.is_empty() {
        return Ok(false);
    }
    let query = format!("{}: {}", technique.name, technique.definition);
    let hits = index.query(gateway, &query, settings.top_k)?;
    let relevant: Vec<&str> = hits
        .iter()
        .filter(|h| h.similarity >= settings.min_similarity)
        .map(|h| h.chunk.text.as_str())
        .collect();
    if relevant.is_empty() {
        log::warn!(
            "`{}`: no paper excerpt reaches similarity {}; definition unchanged",
            technique.name,
            settings.min_similarity
        );
        return Ok(false);
    }
    let rewritten = gateway.chat_text(
        TemplateId::RewriteDescription,
        &slots([
            ("paper", settings.paper_title.to_owned()),
            ("technique", query),
            ("excerpt", relevant.join("\n---\n")),
        ]),
    )?;
    match rewritten.map(|s| s.trim().to_owned()) {
        Some(new) if !new.is_empty() && new != technique.definition => {
            technique.original_definition.get_or_insert_with(|| technique.definition.clone());
            technique.definition = new;
            Ok(true)
        }
        _ => Ok(false),
    }
}

/// Enriches every technique concurrently. Failures leave that definition
/// unchanged and are returned as `(technique id, error)`.
pub fn enrich_tree(
    tree: &mut TechniqueTree,
    index: &VectorIndex,
    gateway: &Gateway,
    settings: EnrichSettings<'_>,
) -> (usize, Vec<(String, ExtractError)>) {
    let results: Vec<(String, Result<bool, ExtractError>)> = tree
        .techniques
        .par_iter_mut()
        .map(|(id, t)| (id.clone(), enrich_definition(t, index, gateway, settings)))
        .collect();
    let mut changed = 0;
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(true) => changed += 1,
            Ok(false) => {}
            Err(e) => {
                log::warn!("enrichment of {id} failed: {e}");
                failures.push((id, e));
            }
        }
    }
    (changed, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmProfile, StubProvider};
    use std::sync::Arc;

    fn cosine_oracle(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let n = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if n(a) == 0.0 || n(b) == 0.0 { 0.0 } else { dot / (n(a) * n(b)) }
    }

    fn raw(name: &str, kind: &str, components: Vec<RawTechnique>) -> RawTechnique {
        RawTechnique {
            name: name.into(),
            kind: kind.into(),
            description: format!("{name} description"),
            components,
        }
    }

    fn gateway(stub: StubProvider) -> Gateway {
        Gateway::single(Arc::new(stub), LlmProfile::default())
    }

    fn text() -> PaperText {
        PaperText {
            title: "Widgets".into(),
            sections: vec![Section {
                title: "Method".into(),
                level: 1,
                body: "The widget encoder compresses widgets into codes.".into(),
            }],
            ..Default::default()
        }
    }

    #[test]
    fn methodology_with_two_components() {
        let answer = "```[{'name': 'Widget Pipeline', 'type': 'Methodology', 'description': 'd', 'components': [\
            {'name': 'Widget Encoder', 'type': 'Technique', 'description': 'e'},\
            {'name': 'Contrastive Widget Loss', 'type': 'Technique', 'description': 'l'}]}]```";
        let gw = gateway(StubProvider::new().with_response(TemplateId::ExtractTechniques, answer));
        let tree = extract_techniques("p", &text(), &gw, 4).unwrap();
        assert_eq!(tree.len(), 3);
        assert_eq!(tree.roots, vec!["p/t/widget-pipeline"]);
        let paper = tree.into_paper("p", PaperMetadata::new("W"));
        let edges = paper.derived_edges();
        assert_eq!(edges.len(), 2);
    }

    #[test]
    fn finding_with_children_rejected() {
        let err = assemble_tree("p", &[raw("F", "Finding", vec![raw("T", "Technique", vec![])])], 4).unwrap_err();
        let ExtractError::Invalid(v) = err else { panic!("{err}") };
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::NonImplementableHasChildren);
    }

    #[test]
    fn empty_body_needs_no_call() {
        let stub = Arc::new(StubProvider::new());
        let gw = Gateway::single(stub.clone(), LlmProfile::default());
        assert!(extract_techniques("p", &PaperText::default(), &gw, 4).unwrap().is_empty());
        assert_eq!(stub.chat_calls(), 0);
    }

    #[test]
    fn depth_is_capped() {
        let deep = raw("A", "Methodology", vec![raw("B", "Technique", vec![raw("C", "Technique", vec![raw("D", "Technique", vec![])])])]);
        assert_eq!(assemble_tree("p", std::slice::from_ref(&deep), 4).unwrap().len(), 4);
        assert_eq!(assemble_tree("p", &[deep], 2).unwrap().len(), 2);
    }

    #[test]
    fn duplicate_names_get_distinct_ids() {
        let t = assemble_tree("p", &[raw("X", "Technique", vec![]), raw("X", "Finding", vec![])], 4).unwrap();
        assert_eq!(t.roots, vec!["p/t/x", "p/t/x-2"]);
    }

    #[test]
    fn typo_category_accepted_unknown_rejected() {
        assert!(assemble_tree("p", &[raw("X", "Techinque", vec![])], 4).is_ok());
        assert!(assemble_tree("p", &[raw("X", "Theory", vec![])], 4).is_err());
    }

    fn settings() -> EnrichSettings<'static> {
        EnrichSettings {
            paper_title: "Widgets",
            top_k: 5,
            min_similarity: 0.3,
        }
    }

    #[test]
    fn empty_index_leaves_definition() {
        let gw = gateway(StubProvider::new());
        let mut t = TechniqueNode::new("p/t/a", "A", Category::Technique, "old");
        assert!(!enrich_definition(&mut t, &VectorIndex::empty("m"), &gw, settings()).unwrap());
        assert_eq!(t.definition, "old");
    }

    #[test]
    fn rewrite_kept_with_original() {
        let gw = gateway(StubProvider::new().with_response(
            TemplateId::RewriteDescription,
            "```The widget encoder compresses widgets into fixed-length codes.```",
        ));
        let idx = build_paper_index("p", &text(), &gw, "emb", 350, 100).unwrap();
        let mut t = TechniqueNode::new("p/t/widget-encoder", "Widget Encoder", Category::Technique, "encodes widgets");
        assert!(enrich_definition(&mut t, &idx, &gw, settings()).unwrap());
        assert_eq!(t.definition, "The widget encoder compresses widgets into fixed-length codes.");
        assert_eq!(t.original_definition.as_deref(), Some("encodes widgets"));
        assert_eq!((t.name.as_str(), t.category), ("Widget Encoder", Category::Technique));
    }

    #[test]
    fn absent_name_stays_unchanged() {
        let stub = Arc::new(StubProvider::new().with_response(TemplateId::RewriteDescription, "```changed```"));
        let gw = Gateway::single(stub.clone(), LlmProfile::default());
        let idx = build_paper_index("p", &text(), &gw, "emb", 350, 100).unwrap();
        let mut t = TechniqueNode::new("p/t/q", "Quantum Sprocket", Category::Technique, "rotates sprockets");
        // Oracle: scan every chunk and confirm all fall below the threshold.
        let q = stub.vector_for("emb", "Quantum Sprocket: rotates sprockets");
        let best = idx.entries().iter().map(|(_, v)| cosine_oracle(&q, &v.values)).fold(f64::MIN, f64::max);
        assert!(best < 0.3, "{best}");
        assert!(!enrich_definition(&mut t, &idx, &gw, settings()).unwrap());
        assert_eq!(t.definition, "rotates sprockets");
        assert_eq!(stub.calls_for(TemplateId::RewriteDescription), 0);
    }
}
