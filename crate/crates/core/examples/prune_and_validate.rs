//! Assembles a small technique tree, grounds one leaf in code, prunes
//! everything ungrounded and validates the result.
//!
//! Run with `cargo run --example prune_and_validate`.

use std::error::Error;

use xkg::graph::{prune_ungrounded, validate, Category, CodeNode, Executability, Graph, PaperMetadata, TechniqueNode};

fn technique(id: &str, category: Category, children: &[&str], code: &[&str]) -> TechniqueNode {
    let mut t = TechniqueNode::new(id, id.rsplit('/').next().unwrap(), category, "");
    t.children = children.iter().map(|c| c.to_string()).collect();
    t.code_refs = code.iter().map(|c| c.to_string()).collect();
    t
}

fn main() -> Result<(), Box<dyn Error>> {
    let techniques = vec![
        technique("p/t/method", Category::Methodology, &["p/t/grounded", "p/t/bare", "p/t/unlinked"], &[]),
        technique("p/t/grounded", Category::Technique, &[], &["p/c/grounded"]),
        technique("p/t/bare", Category::Technique, &["p/t/result"], &[]),
        technique("p/t/result", Category::Finding, &[], &[]),
        technique("p/t/unlinked", Category::Technique, &[], &[]),
    ];
    let code = CodeNode {
        id: "p/c/grounded".into(),
        implementation: "x = 1\n".into(),
        test_script: "# TEST BLOCK\nassert x == 1\n".into(),
        documentation: "Sets x.".into(),
        executable: Executability::Passed,
        provenance: Vec::new(),
        debug_iterations: 1,
    };
    let mut graph = Graph::new();
    graph.add_paper("p", PaperMetadata::new("Pruning demo"), vec!["p/t/method".into()], techniques, vec![code])?;
    println!("before: {} techniques, {} edges", graph.paper("p").unwrap().techniques.len(), graph.edges().len());

    let report = prune_ungrounded(&mut graph, "p")?;
    println!("removed: {:?}\nre-attached: {:?}", report.removed, report.reattached);
    let paper = graph.paper("p").unwrap();
    println!("after: {:?} with roots {:?}", paper.techniques.keys().collect::<Vec<_>>(), paper.technique_roots);
    println!("violations: {:?}", validate(&graph));
    Ok(())
}
