//! Builds the mini graph, then uses it the way an agent would: a code-free
//! planning view of the target paper, task decomposition, and threshold-gated
//! retrieval with verifier reranking.
//!
//! Run with `cargo run --example query_graph`.

use std::error::Error;
use std::path::Path;

use xkg::config::Config;
use xkg::graph::GraphStore;
use xkg::pipeline::{cmd_build, Services, TargetSpec};
use xkg::query::{decompose_task, fetch_planning_context, rerank_and_guide, retrieve_implementations, KgIndex, RetrieveSettings};

fn main() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    let mut cfg = Config::load(&fixtures.join("config.toml"))?;
    let kg = tempfile::tempdir()?;
    cfg.global.kg_path = kg.path().to_owned();
    let services = Services::from_config(&cfg)?;
    let report = cmd_build(&cfg, &TargetSpec::parse("2501.00001"), &services)?;
    let graph = GraphStore::open(kg.path())?.load_graph()?;
    let gw = &services.gateway;

    let view = fetch_planning_context(&graph, &report.target)?;
    println!("planning view of `{}`:", view.metadata.title);
    for t in &view.techniques {
        println!("  {} [{}] {}", t.name, t.category, t.definition);
    }

    let task = "Train a widget encoder with a contrastive objective.";
    let index = KgIndex::build(&graph, gw, &cfg.retrieve.embedding_model)?;
    let settings = RetrieveSettings::from(&cfg.retrieve);
    for (name, description) in decompose_task(task, gw)? {
        let hits = retrieve_implementations(&graph, &index, &name, settings, gw)?;
        println!("\nsub-task `{name}` ({description}): {} hit(s)", hits.len());
        for h in &hits {
            println!("  {:.3}  {}  code={}", h.similarity, h.technique_id, h.code.as_ref().map_or("-", |c| c.id.as_str()));
        }
    }

    let hits = retrieve_implementations(&graph, &index, "contrastive widget loss", settings, gw)?;
    for h in rerank_and_guide(&hits, "contrastive widget loss", gw)? {
        println!("\nverifier kept {}: {}", h.name, h.guidance.unwrap_or_default());
    }
    Ok(())
}
