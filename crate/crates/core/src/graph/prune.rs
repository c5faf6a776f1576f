use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, PaperNode};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub paper_id: String,
    /// Removed technique ids in pre-order.
    pub removed: Vec<String>,
    /// Findings/resources moved to a surviving ancestor (or to the roots)
    /// because their parent was removed.
    pub reattached: Vec<String>,
}

/// Ids of techniques that have a code reference themselves or through a descendant.
pub fn grounded_set(paper: &PaperNode) -> BTreeSet<String> {
    fn visit(paper: &PaperNode, id: &str, memo: &mut BTreeMap<String, bool>) -> bool {
        if let Some(&g) = memo.get(id) {
            return g;
        }
        let Some(t) = paper.techniques.get(id) else {
            return false;
        };
        let mut grounded = !t.code_refs.is_empty();
        for c in &t.children {
            // Visit every child so the memo covers the whole subtree.
            grounded |= visit(paper, c, memo);
        }
        memo.insert(id.to_owned(), grounded);
        grounded
    }
    let mut memo = BTreeMap::new();
    for r in &paper.technique_roots {
        visit(paper, r, &mut memo);
    }
    memo.into_iter().filter_map(|(k, g)| g.then_some(k)).collect()
}

/// Removes every Methodology/Technique node that is not grounded in code.
///
/// Grounding propagates upward: a parent without code survives when any
/// descendant is grounded. Findings and resources are never removed; if
/// their parent goes they are re-attached to the nearest surviving ancestor.
pub fn prune_ungrounded(graph: &mut Graph, paper_id: &str) -> Result<PruneReport, GraphError> {
    graph.modify_paper(paper_id, prune_paper)
}

fn prune_paper(paper: &mut PaperNode) -> PruneReport {
    let grounded = grounded_set(paper);
    let doomed: BTreeSet<String> = paper
        .techniques
        .values()
        .filter(|t| t.category.is_implementable() && !grounded.contains(&t.id))
        .map(|t| t.id.clone())
        .collect();
    let mut report = PruneReport {
        paper_id: paper.id.clone(),
        ..Default::default()
    };
    if doomed.is_empty() {
        return report;
    }
    report.removed = paper
        .preorder()
        .into_iter()
        .filter(|id| doomed.contains(*id))
        .map(str::to_owned)
        .collect();

    // Rebuild children lists top-down, lifting exempt nodes out of removed subtrees.
    let old_roots = std::mem::take(&mut paper.technique_roots);
    let mut new_children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut new_roots = Vec::new();
    let mut stack: Vec<(String, Option<String>)> =
        old_roots.iter().rev().map(|r| (r.clone(), None)).collect();
    while let Some((id, anchor)) = stack.pop() {
        let node = &paper.techniques[&id];
        let kept = !doomed.contains(&id);
        if kept {
            if anchor.as_deref() != parent_of(paper, &id).as_deref() {
                report.reattached.push(id.clone());
            }
            match &anchor {
                Some(a) => new_children.entry(a.clone()).or_default().push(id.clone()),
                None => new_roots.push(id.clone()),
            }
        }
        let next_anchor = if kept { Some(id.clone()) } else { anchor };
        for c in node.children.iter().rev() {
            stack.push((c.clone(), next_anchor.clone()));
        }
    }
    for id in &doomed {
        paper.techniques.remove(id);
    }
    for t in paper.techniques.values_mut() {
        t.children = new_children.remove(&t.id).unwrap_or_default();
    }
    paper.technique_roots = new_roots;
    report
}

fn parent_of(paper: &PaperNode, id: &str) -> Option<String> {
    paper
        .techniques
        .values()
        .find(|t| t.children.iter().any(|c| c == id))
        .map(|t| t.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate, Category, CodeNode, Executability, PaperMetadata, TechniqueNode};

    fn code(id: &str) -> CodeNode {
        CodeNode {
            id: id.into(),
            implementation: "x = 1\n".into(),
            test_script: "# TEST BLOCK\n".into(),
            documentation: String::new(),
            executable: Executability::Passed,
            provenance: vec![],
            debug_iterations: 1,
        }
    }

    fn graph_with(ts: Vec<TechniqueNode>, roots: &[&str], codes: &[&str]) -> Graph {
        let mut g = Graph::new();
        g.add_paper(
            "p",
            PaperMetadata::new("P"),
            roots.iter().map(|s| s.to_string()).collect(),
            ts,
            codes.iter().map(|c| code(c)).collect(),
        )
        .unwrap();
        g
    }

    fn tech(id: &str, cat: Category, children: &[&str], codes: &[&str]) -> TechniqueNode {
        let mut t = TechniqueNode::new(id, id, cat, "");
        t.children = children.iter().map(|s| s.to_string()).collect();
        t.code_refs = codes.iter().map(|s| s.to_string()).collect();
        t
    }

    #[test]
    fn directly_grounded_survives() {
        let mut g = graph_with(vec![tech("a", Category::Technique, &[], &["c"])], &["a"], &["c"]);
        let r = prune_ungrounded(&mut g, "p").unwrap();
        assert!(r.removed.is_empty());
    }

    #[test]
    fn parent_of_grounded_child_survives() {
        let mut g = graph_with(
            vec![
                tech("m", Category::Methodology, &["a", "b"], &[]),
                tech("a", Category::Technique, &[], &["c"]),
                tech("b", Category::Technique, &[], &[]),
            ],
            &["m"],
            &["c"],
        );
        let r = prune_ungrounded(&mut g, "p").unwrap();
        assert_eq!(r.removed, vec!["b".to_string()]);
        let p = g.paper("p").unwrap();
        assert_eq!(p.techniques["m"].children, vec!["a".to_string()]);
        assert_eq!(g.edges().len(), 2);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn ungrounded_leaf_removed_and_reported() {
        let mut g = graph_with(vec![tech("a", Category::Technique, &[], &[])], &["a"], &[]);
        let r = prune_ungrounded(&mut g, "p").unwrap();
        assert_eq!(r.removed, vec!["a".to_string()]);
        assert!(g.paper("p").unwrap().techniques.is_empty());
    }

    #[test]
    fn findings_are_exempt_and_lifted() {
        let mut g = graph_with(
            vec![
                tech("m", Category::Methodology, &["t", "g"], &[]),
                tech("t", Category::Technique, &["f"], &[]),
                tech("f", Category::Finding, &[], &[]),
                tech("g", Category::Technique, &[], &["c"]),
                tech("r", Category::Resource, &[], &[]),
            ],
            &["m", "r"],
            &["c"],
        );
        let r = prune_ungrounded(&mut g, "p").unwrap();
        assert_eq!(r.removed, vec!["t".to_string()]);
        assert_eq!(r.reattached, vec!["f".to_string()]);
        let p = g.paper("p").unwrap();
        assert_eq!(p.techniques["m"].children, vec!["f".to_string(), "g".to_string()]);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn unknown_paper_errors() {
        let mut g = Graph::new();
        assert_eq!(
            prune_ungrounded(&mut g, "nope").unwrap_err(),
            GraphError::UnknownPaper("nope".into())
        );
    }
}
