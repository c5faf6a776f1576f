use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GraphError;

/// Kind of academic concept a technique node represents.
///
/// Only `Methodology` and `Technique` are implementable; `Finding` and
/// `Resource` never carry components and are exempt from grounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Methodology,
    Technique,
    Finding,
    Resource,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Methodology,
        Category::Technique,
        Category::Finding,
        Category::Resource,
    ];

    pub fn is_implementable(self) -> bool {
        matches!(self, Category::Methodology | Category::Technique)
    }

    pub fn may_have_children(self) -> bool {
        self.is_implementable()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "methodology" => Some(Category::Methodology),
            "technique" | "techinque" => Some(Category::Technique),
            "finding" => Some(Category::Finding),
            "resource" => Some(Category::Resource),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Methodology => "Methodology",
            Category::Technique => "Technique",
            Category::Finding => "Finding",
            Category::Resource => "Resource",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaperMetadata {
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub references: Vec<String>,
    pub repo_url: Option<String>,
    pub source_tokens: u64,
}

impl PaperMetadata {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueNode {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub definition: String,
    /// Definition as first extracted, kept when enrichment rewrote it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_definition: Option<String>,
    pub children: Vec<String>,
    pub code_refs: Vec<String>,
}

impl TechniqueNode {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        category: Category,
        definition: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            category,
            definition: definition.into(),
            original_definition: None,
            children: Vec::new(),
            code_refs: Vec::new(),
        }
    }
}

/// Outcome of sandbox verification for a code node.
///
/// `Unchecked` marks nodes built with execution checking disabled; such
/// nodes are never reported as executable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Option<bool>", into = "Option<bool>")]
pub enum Executability {
    Passed,
    Failed,
    Unchecked,
}

impl Executability {
    pub fn is_executable(self) -> bool {
        self == Executability::Passed
    }
}

impl From<Option<bool>> for Executability {
    fn from(v: Option<bool>) -> Self {
        match v {
            Some(true) => Executability::Passed,
            Some(false) => Executability::Failed,
            None => Executability::Unchecked,
        }
    }
}

impl From<Executability> for Option<bool> {
    fn from(v: Executability) -> Self {
        match v {
            Executability::Passed => Some(true),
            Executability::Failed => Some(false),
            Executability::Unchecked => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub repo_url: String,
    pub file_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeNode {
    pub id: String,
    pub implementation: String,
    pub test_script: String,
    pub documentation: String,
    pub executable: Executability,
    pub provenance: Vec<Provenance>,
    pub debug_iterations: u32,
}

impl CodeNode {
    /// Full program handed to the interpreter: implementation followed by the test block.
    pub fn program(&self) -> String {
        join_program(&self.implementation, &self.test_script)
    }
}

pub(crate) fn join_program(implementation: &str, test_script: &str) -> String {
    let mut out = String::with_capacity(implementation.len() + test_script.len() + 1);
    out.push_str(implementation);
    if !implementation.is_empty() && !implementation.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(test_script);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperNode {
    pub id: String,
    pub metadata: PaperMetadata,
    pub technique_roots: Vec<String>,
    pub techniques: BTreeMap<String, TechniqueNode>,
    pub code_registry: BTreeMap<String, CodeNode>,
}

impl PaperNode {
    pub fn new(id: impl Into<String>, metadata: PaperMetadata) -> Self {
        Self {
            id: id.into(),
            metadata,
            technique_roots: Vec::new(),
            techniques: BTreeMap::new(),
            code_registry: BTreeMap::new(),
        }
    }

    /// Technique ids in depth-first pre-order from the roots.
    pub fn preorder(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self.technique_roots.iter().rev().map(String::as_str).collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            out.push(id);
            if let Some(t) = self.techniques.get(id) {
                stack.extend(t.children.iter().rev().map(String::as_str));
            }
        }
        out
    }

    /// Structural and implementation edges implied by the technique tree.
    pub fn derived_edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        for id in self.preorder() {
            let t = &self.techniques[id];
            for c in &t.children {
                edges.push(Edge::structural(&t.id, c));
            }
            for c in &t.code_refs {
                edges.push(Edge::implementation(&t.id, c));
            }
        }
        edges
    }

    /// Checks the tree shape: roots and children resolve, every technique is
    /// reached exactly once, and code refs resolve into the registry.
    pub(crate) fn check_structure(&self) -> Result<(), GraphError> {
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        let mut root_set = BTreeSet::new();
        for r in &self.technique_roots {
            if !self.techniques.contains_key(r) {
                return Err(GraphError::UnknownTechnique(r.clone()));
            }
            if !root_set.insert(r.as_str()) {
                return Err(GraphError::MultipleParents(r.clone()));
            }
        }
        for t in self.techniques.values() {
            for c in &t.children {
                if !self.techniques.contains_key(c) {
                    return Err(GraphError::UnknownTechnique(c.clone()));
                }
                if root_set.contains(c.as_str()) || parent.insert(c, &t.id).is_some() {
                    return Err(GraphError::MultipleParents(c.clone()));
                }
            }
            for c in &t.code_refs {
                if !self.code_registry.contains_key(c) {
                    return Err(GraphError::DanglingCodeRef {
                        technique: t.id.clone(),
                        code: c.clone(),
                    });
                }
            }
        }
        // With single parents established, anything not reachable from a root
        // sits on a cycle or hangs off one.
        let reached: BTreeSet<&str> = self.preorder().into_iter().collect();
        if let Some(t) = self.techniques.keys().find(|k| !reached.contains(k.as_str())) {
            return Err(GraphError::Cycle(t.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Structural,
    Implementation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub src: String,
    pub dst: String,
}

impl Edge {
    pub fn structural(src: &str, dst: &str) -> Self {
        Self {
            kind: EdgeKind::Structural,
            src: src.to_owned(),
            dst: dst.to_owned(),
        }
    }

    pub fn implementation(src: &str, dst: &str) -> Self {
        Self {
            kind: EdgeKind::Implementation,
            src: src.to_owned(),
            dst: dst.to_owned(),
        }
    }
}

/// Where a node id resolves to inside a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef<'a> {
    Paper(&'a PaperNode),
    Technique(&'a PaperNode, &'a TechniqueNode),
    Code(&'a PaperNode, &'a CodeNode),
}
