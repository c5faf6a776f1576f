//! Saves a paper to a graph directory, reloads it and checks that re-saving
//! produces identical bytes.
//!
//! Run with `cargo run --example persist_graph`.

use std::error::Error;

use xkg::graph::{load_paper, save_paper, Category, GraphStore, PaperMetadata, PaperNode, TechniqueNode};

fn main() -> Result<(), Box<dyn Error>> {
    let mut paper = PaperNode::new("2401.00002", PaperMetadata::new("Widget Pipelines"));
    let t = TechniqueNode::new("2401.00002/t/widget-encoder", "Widget Encoder", Category::Technique, "Normalizes widgets.");
    paper.technique_roots.push(t.id.clone());
    paper.techniques.insert(t.id.clone(), t);

    let dir = tempfile::tempdir()?;
    let store = GraphStore::create(dir.path())?;
    store.put_paper(&paper)?;
    println!("manifest: {:?}", store.manifest()?);
    println!("{}", std::fs::read_to_string(store.paper_path(&paper.id))?);

    let back = store.get_paper(&paper.id)?;
    assert_eq!(back, paper);
    let bytes = save_paper(&back);
    assert_eq!(save_paper(&load_paper(&bytes)?), bytes);
    println!("round trip equal; re-save is byte-stable");
    Ok(())
}
