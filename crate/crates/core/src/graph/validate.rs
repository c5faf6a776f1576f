use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{EdgeKind, Graph, NodeRef, PaperNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rule {
    EmptyTitle,
    DuplicateReference,
    EmptyTechniqueName,
    UnknownTechnique,
    MultipleParents,
    Unreachable,
    NonImplementableHasChildren,
    DanglingCodeRef,
    StructuralEdgeKind,
    ImplementationEdgeKind,
    DuplicateEdge,
    EdgeWithoutTreeLink,
    TreeLinkWithoutEdge,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::EmptyTitle => "paper title must be nonempty",
            Rule::DuplicateReference => "reference list must be deduplicated",
            Rule::EmptyTechniqueName => "technique name must be nonempty",
            Rule::UnknownTechnique => "referenced technique does not exist",
            Rule::MultipleParents => "technique has more than one parent",
            Rule::Unreachable => "technique is not reachable from the roots (cycle or orphan)",
            Rule::NonImplementableHasChildren => "only Methodology and Technique may have components",
            Rule::DanglingCodeRef => "code reference does not resolve in the code registry",
            Rule::StructuralEdgeKind => "structural edges must connect technique to technique",
            Rule::ImplementationEdgeKind => "implementation edges must connect technique to code",
            Rule::DuplicateEdge => "edge appears more than once",
            Rule::EdgeWithoutTreeLink => "edge has no matching child or code reference",
            Rule::TreeLinkWithoutEdge => "child or code reference has no materialized edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Node id, or `src -> dst` for edges.
    pub subject: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule.describe())
    }
}

/// Checks every node and edge invariant; an empty list means the graph is valid.
pub fn validate(graph: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();
    for paper in graph.papers() {
        validate_paper(paper, &mut out);
    }
    validate_edges(graph, &mut out);
    out
}

fn push(out: &mut Vec<Violation>, subject: impl Into<String>, rule: Rule) {
    out.push(Violation {
        subject: subject.into(),
        rule,
    });
}

pub(crate) fn validate_paper(paper: &PaperNode, out: &mut Vec<Violation>) {
    if paper.metadata.title.trim().is_empty() {
        push(out, &paper.id, Rule::EmptyTitle);
    }
    let mut seen = BTreeSet::new();
    for r in &paper.metadata.references {
        if !seen.insert(crate::curator::normalize_title(r)) {
            push(out, format!("{}: {r}", paper.id), Rule::DuplicateReference);
        }
    }

    let mut parents: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &paper.technique_roots {
        *parents.entry(r).or_default() += 1;
        if !paper.techniques.contains_key(r) {
            push(out, r, Rule::UnknownTechnique);
        }
    }
    for t in paper.techniques.values() {
        if t.name.trim().is_empty() {
            push(out, &t.id, Rule::EmptyTechniqueName);
        }
        if !t.children.is_empty() && !t.category.may_have_children() {
            push(out, &t.id, Rule::NonImplementableHasChildren);
        }
        for c in &t.children {
            *parents.entry(c).or_default() += 1;
            if !paper.techniques.contains_key(c) {
                push(out, c, Rule::UnknownTechnique);
            }
        }
        for c in &t.code_refs {
            if !paper.code_registry.contains_key(c) {
                push(out, format!("{} -> {c}", t.id), Rule::DanglingCodeRef);
            }
        }
    }
    for (id, n) in &parents {
        if *n > 1 && paper.techniques.contains_key(*id) {
            push(out, *id, Rule::MultipleParents);
        }
    }
    let reached: BTreeSet<&str> = paper.preorder().into_iter().collect();
    for id in paper.techniques.keys() {
        if !reached.contains(id.as_str()) {
            push(out, id, Rule::Unreachable);
        }
    }
}

fn validate_edges(graph: &Graph, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    let mut linked = BTreeSet::new();
    for e in graph.edges() {
        let subject = format!("{} -> {}", e.src, e.dst);
        if !seen.insert(e) {
            push(out, subject, Rule::DuplicateEdge);
            continue;
        }
        let src = graph.resolve(&e.src);
        let dst = graph.resolve(&e.dst);
        match e.kind {
            EdgeKind::Structural => match (src, dst) {
                (Some(NodeRef::Technique(p, t)), Some(NodeRef::Technique(q, _))) if p.id == q.id => {
                    if !t.children.contains(&e.dst) {
                        push(out, subject, Rule::EdgeWithoutTreeLink);
                    }
                }
                _ => push(out, subject, Rule::StructuralEdgeKind),
            },
            EdgeKind::Implementation => match (src, dst) {
                (Some(NodeRef::Technique(p, t)), Some(NodeRef::Code(q, _))) if p.id == q.id => {
                    if !t.code_refs.contains(&e.dst) {
                        push(out, subject, Rule::EdgeWithoutTreeLink);
                    }
                }
                _ => push(out, subject, Rule::ImplementationEdgeKind),
            },
        }
        linked.insert((e.kind, e.src.as_str(), e.dst.as_str()));
    }
    for paper in graph.papers() {
        for t in paper.techniques.values() {
            let links = t
                .children
                .iter()
                .map(|c| (EdgeKind::Structural, c))
                .chain(t.code_refs.iter().map(|c| (EdgeKind::Implementation, c)));
            for (kind, dst) in links {
                if !linked.contains(&(kind, t.id.as_str(), dst.as_str())) {
                    push(out, format!("{} -> {dst}", t.id), Rule::TreeLinkWithoutEdge);
                }
            }
        }
    }
}
