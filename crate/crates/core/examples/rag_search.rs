//! Chunks two source files, embeds them with the offline hashed embedder and
//! runs an exact cosine top-k search.
//!
//! Run with `cargo run --example rag_search`.

use std::error::Error;
use std::sync::Arc;

use xkg::llm::{Gateway, LlmProfile, StubProvider};
use xkg::rag::{build_index, split_document, split_text};

fn main() -> Result<(), Box<dyn Error>> {
    let spans: Vec<_> = split_text(&"x".repeat(600), 350, 100)?.iter().map(|c| c.span).collect();
    println!("600 chars at size 350, overlap 100: {spans:?}");

    let files = [
        ("loss.py", "def contrastive_loss(sims, positive, tau):\n    logits = [s / tau for s in sims]\n    return logsumexp(logits) - logits[positive]\n"),
        ("data.py", "def load_widgets(path):\n    with open(path) as f:\n        return [line.split(',') for line in f]\n"),
    ];
    let mut chunks = Vec::new();
    for (path, text) in files {
        chunks.extend(split_document("repo", Some(path), text, 80, 20)?);
    }
    let gw = Gateway::single(Arc::new(StubProvider::new()), LlmProfile::default());
    let index = build_index(chunks, &gw, "text-embedding-3-small")?;
    println!("indexed {} chunks of dimension {:?}", index.len(), index.dimension());
    for hit in index.query(&gw, "contrastive loss over similarity logits", 3)? {
        let c = hit.chunk;
        println!("{:.4}  {} {:?}", hit.similarity, c.file_path.as_deref().unwrap_or("-"), c.span);
    }
    Ok(())
}
