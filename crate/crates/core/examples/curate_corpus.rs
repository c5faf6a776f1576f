//! Curates the corpus around the mini target paper: extract and rank its
//! references, search by its main technique, resolve sources and official
//! repositories, then drop blacklisted repositories.
//!
//! Run with `cargo run --example curate_corpus`.

use std::error::Error;
use std::path::Path;

use xkg::config::Config;
use xkg::curator::{
    dedup_candidates, extract_references, filter_official, rank_references, resolve_sources, retrieve_by_technique,
    Blacklist, CandidatePaper, Origin,
};
use xkg::extract::parse_paper;
use xkg::graph::PaperMetadata;
use xkg::pipeline::Services;

fn main() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    let cfg = Config::load(&fixtures.join("config.toml"))?;
    let services = Services::from_config(&cfg)?;
    let gw = &services.gateway;

    let bundle = services.arxiv.fetch("2501.00001")?;
    let text = parse_paper(&bundle);
    let mut target = PaperMetadata::new(text.title.clone());
    target.abstract_text = text.abstract_text.clone();

    let refs = extract_references(&bundle.bbl_text(), gw)?;
    println!("references: {refs:?}");
    let top = rank_references(&target, &refs, cfg.corpus.reference_top_k, gw)?;
    let mut candidates: Vec<CandidatePaper> = top.into_iter().map(|t| CandidatePaper::new(t, Origin::Reference)).collect();
    let found = retrieve_by_technique(&["Widget Gizmo Framework".into()], services.search.as_ref(), 5, &candidates)?;
    println!("search added {} candidate(s)", found.len());
    candidates.extend(found);

    let mut resolved = Vec::new();
    for c in dedup_candidates(candidates) {
        let r = resolve_sources(c, services.arxiv.as_ref(), services.repos.as_ref(), gw);
        println!(
            "{:<48} arxiv={:<12} repo={}",
            r.candidate.title,
            r.candidate.arxiv_id.as_deref().unwrap_or("-"),
            r.candidate.repo_url.as_deref().unwrap_or("-")
        );
        resolved.push(r.candidate);
    }
    let blacklist = Blacklist::load(cfg.corpus.blacklist.as_deref().expect("fixture config names a blacklist"))?;
    for c in filter_official(resolved, &blacklist) {
        println!("kept: {} <- {}", c.title, c.repo_url.unwrap_or_default());
    }
    Ok(())
}
