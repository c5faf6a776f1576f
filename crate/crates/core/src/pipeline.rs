//! End-to-end orchestration behind the command line: build a graph from a
//! target paper, summarize it, validate it and query it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{build_repo_index, ground_paper, CodegenSettings, LocateSettings, RepoContext, Sandbox};
use crate::config::{Config, ConfigError};
use crate::curator::{
    dedup_candidates, expand_source_archive, extract_references, filter_official, normalize_title,
    rank_references, resolve_sources, retrieve_by_technique, ArxivSearch, ArxivSource, Blacklist,
    CandidatePaper, CorpusManifest, FixtureArxiv, FixtureRepos, FixtureSearch, GitRepos, HttpArxiv,
    LatexBundle, NoSearch, Origin, RepoSnapshot, RepoSource, SearchClient,
};
use crate::extract::{build_paper_index, enrich_tree, extract_techniques, parse_paper, EnrichSettings, PaperText};
use crate::graph::{
    paper_id, prune_ungrounded, validate, Category, EdgeKind, Graph, GraphStore, PaperMetadata, PaperNode,
    StoreError, Violation,
};
use crate::llm::{slots, Gateway, HttpProvider, StubProvider, StubTable, TemplateId, Usage};
use crate::query::{rerank_and_guide, retrieve_implementations, KgIndex, RetrievalHit, RetrieveSettings};

/// File written next to the graph listing the curated corpus.
pub const CORPUS_FILE: &str = "corpus.json";
const ARXIV_API: &str = "https://export.arxiv.org/api";

/// Pipeline stage, reported with failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Target,
    Curation,
    Extraction,
    Codegen,
    Pruning,
    Persist,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Setup => "setup",
            Stage::Target => "target",
            Stage::Curation => "curation",
            Stage::Extraction => "extraction",
            Stage::Codegen => "codegen",
            Stage::Pruning => "pruning",
            Stage::Persist => "persist",
        })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("graph has {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
    /// A stored document that cannot be read back as a valid paper.
    #[error("invalid graph: {0}")]
    Unreadable(#[source] StoreError),
}

impl PipelineError {
    fn at(stage: Stage, source: impl Into<BoxError>) -> Self {
        PipelineError::Stage {
            stage,
            source: source.into(),
        }
    }

    /// Process exit code: 1 usage, 2 pipeline failure, 3 validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { .. } | PipelineError::Store(_) => 2,
            PipelineError::Invalid(_) | PipelineError::Unreadable(_) => 3,
        }
    }
}

/// Model provider plus the network-facing sources used by a build.
pub struct Services {
    pub gateway: Gateway,
    pub search: Box<dyn SearchClient>,
    pub arxiv: Box<dyn ArxivSource>,
    pub repos: Box<dyn RepoSource>,
}

impl fmt::Debug for Services {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Services").field("gateway", &self.gateway).finish_non_exhaustive()
    }
}

impl Services {
    /// Fixture or live services, as the configuration asks.
    pub fn from_config(cfg: &Config) -> Result<Self, PipelineError> {
        let profile = cfg.active_profile()?.clone();
        if cfg.global.fixture_mode {
            let dir = cfg.global.fixtures_dir.as_deref().ok_or_else(|| ConfigError::Value {
                key: "global.fixtures_dir".into(),
                message: "fixture mode needs a fixtures directory".into(),
            })?;
            return Self::fixtures(dir, profile, cfg.provider.embed_batch);
        }
        let timeout = Duration::from_secs(profile.timeout_secs);
        let provider = HttpProvider::new(&cfg.provider.base_url, &cfg.provider.api_key_env, timeout, cfg.provider.embed_batch);
        Ok(Self {
            gateway: Gateway::single(Arc::new(provider), profile).with_embed_batch(cfg.provider.embed_batch),
            search: Box::new(ArxivSearch::new(ARXIV_API, timeout)),
            arxiv: Box::new(HttpArxiv::new(&cfg.provider.arxiv_base_url, ARXIV_API, timeout)),
            repos: Box::new(GitRepos::new(timeout)),
        })
    }

    /// Recorded services read from `dir`: `stub.json` for the model,
    /// `search.json`, `arxiv/` and `repos/`. Missing pieces fall back to
    /// the stub's defaults, no search results and no sources.
    pub fn fixtures(dir: &Path, profile: crate::llm::LlmProfile, embed_batch: usize) -> Result<Self, PipelineError> {
        let stub_path = dir.join("stub.json");
        let stub = if stub_path.is_file() {
            StubProvider::from_table(StubTable::load(&stub_path).map_err(|e| PipelineError::at(Stage::Setup, e))?)
        } else {
            StubProvider::new()
        };
        let search_path = dir.join("search.json");
        let search: Box<dyn SearchClient> = if search_path.is_file() {
            Box::new(FixtureSearch::load(&search_path).map_err(|e| PipelineError::at(Stage::Setup, e))?)
        } else {
            Box::new(NoSearch)
        };
        Ok(Self {
            gateway: Gateway::single(Arc::new(stub), profile).with_embed_batch(embed_batch),
            search,
            arxiv: Box::new(FixtureArxiv::open(dir.join("arxiv")).map_err(|e| PipelineError::at(Stage::Setup, e))?),
            repos: Box::new(FixtureRepos::new(dir.join("repos"))),
        })
    }
}

/// How the target paper was named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    /// A LaTeX source directory or archive on disk.
    Path(PathBuf),
    ArxivId(String),
    Title(String),
}

impl TargetSpec {
    pub fn parse(s: &str) -> Self {
        let p = Path::new(s);
        if p.exists() {
            return TargetSpec::Path(p.to_owned());
        }
        let id = s.trim().trim_start_matches("arXiv:").trim_start_matches("arxiv:");
        let new_style = regex::Regex::new(r"^\d{4}\.\d{4,5}(v\d+)?$").expect("valid regex");
        let old_style = regex::Regex::new(r"^[a-z][a-z-]*(\.[A-Z]{2})?/\d{7}(v\d+)?$").expect("valid regex");
        if new_style.is_match(id) || old_style.is_match(id) {
            TargetSpec::ArxivId(id.to_owned())
        } else {
            TargetSpec::Title(s.trim().to_owned())
        }
    }
}

/// One corpus paper that could not be built; the build carries on without it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperFailure {
    pub title: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub target: String,
    pub candidates: usize,
    pub papers_curated: usize,
    pub papers_built: usize,
    /// Papers already in the graph from an earlier run.
    pub papers_resumed: usize,
    pub techniques_by_category: BTreeMap<Category, usize>,
    pub code_nodes_executable: usize,
    pub techniques_pruned: usize,
    pub source_tokens: u64,
    pub usage: Usage,
    pub failures: Vec<PaperFailure>,
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, label: &str, value: &dyn fmt::Display| writeln!(f, "{:<28}{value}", format!("{label}:"));
        row(f, "target", &self.target)?;
        row(f, "candidates", &self.candidates)?;
        row(f, "papers curated", &self.papers_curated)?;
        row(f, "papers built", &self.papers_built)?;
        row(f, "papers resumed", &self.papers_resumed)?;
        for c in Category::ALL {
            row(f, &format!("techniques ({c})"), &self.techniques_by_category.get(&c).copied().unwrap_or(0))?;
        }
        row(f, "executable code nodes", &self.code_nodes_executable)?;
        row(f, "techniques pruned", &self.techniques_pruned)?;
        row(f, "source tokens", &self.source_tokens)?;
        let u = &self.usage;
        row(f, "chat calls", &u.chat_calls)?;
        row(f, "prompt / response bytes", &format!("{} / {}", u.prompt_bytes, u.response_bytes))?;
        row(f, "embedding calls", &u.embed_calls)?;
        for fail in &self.failures {
            row(f, "failed", &format!("`{}` at {}: {}", fail.title, fail.stage, fail.message))?;
        }
        Ok(())
    }
}

fn load_target_bundle(spec: &TargetSpec, arxiv: &dyn ArxivSource) -> Result<(LatexBundle, Option<String>), PipelineError> {
    let fail = |e: BoxError| PipelineError::at(Stage::Target, e);
    match spec {
        TargetSpec::Path(p) if p.is_dir() => Ok((LatexBundle::load_dir(p).map_err(|e| fail(e.into()))?, None)),
        TargetSpec::Path(p) => {
            let bytes = std::fs::read(p).map_err(|e| fail(e.into()))?;
            Ok((expand_source_archive(&bytes).map_err(|e| fail(e.into()))?, None))
        }
        TargetSpec::ArxivId(id) => Ok((arxiv.fetch(id).map_err(|e| fail(e.into()))?, Some(id.clone()))),
        TargetSpec::Title(t) => {
            let id = arxiv
                .lookup(t)
                .map_err(|e| fail(e.into()))?
                .ok_or_else(|| fail(format!("no arXiv entry titled `{t}`").into()))?;
            Ok((arxiv.fetch(&id).map_err(|e| fail(e.into()))?, Some(id)))
        }
    }
}

fn target_title(text: &PaperText, spec: &TargetSpec) -> String {
    if !text.title.trim().is_empty() {
        return text.title.trim().to_owned();
    }
    match spec {
        TargetSpec::Title(t) => t.clone(),
        TargetSpec::ArxivId(id) => id.clone(),
        TargetSpec::Path(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

/// Parses, extracts and enriches one paper. No code is attached yet.
fn extract_paper(
    id: &str,
    metadata: PaperMetadata,
    text: &PaperText,
    cfg: &Config,
    gateway: &Gateway,
) -> Result<PaperNode, PipelineError> {
    let fail = |e: BoxError| PipelineError::at(Stage::Extraction, e);
    let mut tree = extract_techniques(id, text, gateway, cfg.global.max_tree_depth).map_err(|e| fail(e.into()))?;
    if cfg.paper.rag && !tree.is_empty() {
        let split = cfg.paper.text_splitter;
        let index = build_paper_index(id, text, gateway, &cfg.paper.embedder.model, split.chunk_size, split.chunk_overlap)
            .map_err(|e| fail(e.into()))?;
        let settings = EnrichSettings {
            paper_title: &metadata.title,
            top_k: cfg.paper.retriever.faiss.top_k,
            min_similarity: cfg.paper.retriever.min_similarity,
        };
        enrich_tree(&mut tree, &index, gateway, settings);
    }
    Ok(tree.into_paper(id, metadata))
}

fn metadata_for(title: String, text: &PaperText, bundle: &LatexBundle, repo_url: Option<String>, gateway: &Gateway) -> Result<PaperMetadata, PipelineError> {
    let references = extract_references(&bundle.bbl_text(), gateway).map_err(|e| PipelineError::at(Stage::Extraction, e))?;
    Ok(PaperMetadata {
        title,
        abstract_text: text.abstract_text.clone(),
        references,
        repo_url,
        source_tokens: text.source_tokens,
    })
}

/// Outcome of building one corpus paper.
struct Built {
    paper: PaperNode,
    pruned: usize,
}

fn build_corpus_paper(
    candidate: &CandidatePaper,
    repo: &RepoSnapshot,
    cfg: &Config,
    services: &Services,
    sandbox: &Sandbox,
) -> Result<Built, PipelineError> {
    let gw = &services.gateway;
    let bundle = candidate.latex_source.as_ref().expect("curated papers carry sources");
    let text = parse_paper(bundle);
    let id = paper_id(candidate.arxiv_id.as_deref(), &candidate.title);
    let meta = metadata_for(candidate.title.clone(), &text, bundle, candidate.repo_url.clone(), gw)?;
    let mut paper = extract_paper(&id, meta, &text, cfg, gw)?;

    let fail = |e: BoxError| PipelineError::at(Stage::Codegen, e);
    let split = cfg.code.text_splitter;
    let index = build_repo_index(repo, gw, &cfg.code.embedder.model, split.chunk_size, split.chunk_overlap)
        .map_err(|e| fail(e.into()))?;
    let overview = gw
        .chat_text(
            TemplateId::RepoOverview,
            &slots([
                ("name", repo.name().to_owned()),
                ("file_tree", repo.file_tree()),
                ("readme", repo.readme().unwrap_or_default().to_owned()),
            ]),
        )
        .map_err(|e| fail(e.into()))?
        .unwrap_or_default();
    let settings = CodegenSettings {
        locate: LocateSettings {
            top_k: cfg.code.retriever.faiss.top_k,
            top_files: cfg.code.retriever.llm.top_files,
            max_prompt_bytes: cfg.global.max_prompt_code_bytes,
        },
        exec_check: cfg.code.exec_check_code,
        max_iters: cfg.code.sandbox.max_debug_iters,
    };
    let ctx = RepoContext {
        repo,
        index: &index,
        overview: &overview,
    };
    let report = ground_paper(&mut paper, ctx, sandbox, gw, settings);
    for (t, e) in &report.failed {
        log::warn!("{id}: {t} left ungrounded after an error: {e}");
    }

    let mut g = Graph::new();
    g.insert_paper(paper).map_err(|e| PipelineError::at(Stage::Pruning, e))?;
    let pruned = prune_ungrounded(&mut g, &id).map_err(|e| PipelineError::at(Stage::Pruning, e))?;
    let violations = validate(&g);
    if !violations.is_empty() {
        return Err(PipelineError::Invalid(violations));
    }
    let paper = g.remove_paper(&id).expect("paper was inserted");
    Ok(Built {
        paper,
        pruned: pruned.removed.len(),
    })
}

fn count_paper(report: &mut BuildReport, paper: &PaperNode) {
    for t in paper.techniques.values() {
        *report.techniques_by_category.entry(t.category).or_default() += 1;
    }
    report.code_nodes_executable += paper.code_registry.values().filter(|c| c.executable.is_executable()).count();
    report.source_tokens += paper.metadata.source_tokens;
}

/// Curates a corpus around the target and returns the papers to build with
/// their verified repositories.
fn curate(
    target: &PaperNode,
    bundle: &LatexBundle,
    cfg: &Config,
    services: &Services,
) -> Result<(usize, Vec<(CandidatePaper, RepoSnapshot)>), PipelineError> {
    let fail = |e: BoxError| PipelineError::at(Stage::Curation, e);
    let gw = &services.gateway;
    let refs = if target.metadata.references.is_empty() {
        extract_references(&bundle.bbl_text(), gw).map_err(|e| fail(e.into()))?
    } else {
        target.metadata.references.clone()
    };
    let top = rank_references(&target.metadata, &refs, cfg.corpus.reference_top_k, gw).map_err(|e| fail(e.into()))?;
    let mut candidates: Vec<CandidatePaper> = top.into_iter().map(|t| CandidatePaper::new(t, Origin::Reference)).collect();

    let mut keywords: Vec<String> = target
        .technique_roots
        .iter()
        .filter_map(|r| target.techniques.get(r))
        .filter(|t| t.category == Category::Methodology)
        .map(|t| t.name.clone())
        .collect();
    if let Some(n) = cfg.corpus.technique_keywords {
        keywords.truncate(n);
    }
    if keywords.is_empty() {
        log::warn!("target has no methodology to search for; using references only");
    } else {
        let found = retrieve_by_technique(&keywords, services.search.as_ref(), cfg.corpus.search_results_per_keyword, &candidates)
            .map_err(|e| fail(e.into()))?;
        candidates.extend(found);
    }
    let own = normalize_title(&target.metadata.title);
    let candidates: Vec<CandidatePaper> =
        dedup_candidates(candidates).into_iter().filter(|c| normalize_title(&c.title) != own).collect();
    let n_candidates = candidates.len();

    let resolutions: Vec<_> = candidates
        .into_par_iter()
        .map(|c| resolve_sources(c, services.arxiv.as_ref(), services.repos.as_ref(), gw))
        .collect();
    let mut repos: BTreeMap<String, RepoSnapshot> = BTreeMap::new();
    let mut resolved = Vec::new();
    for r in resolutions {
        for e in &r.errors {
            log::warn!("`{}`: {e}", r.candidate.title);
        }
        if let Some(repo) = r.repo {
            repos.insert(normalize_title(&r.candidate.title), repo);
        }
        resolved.push(r.candidate);
    }
    let blacklist = match &cfg.corpus.blacklist {
        Some(p) => Blacklist::load(p).map_err(|e| fail(e.into()))?,
        None => Blacklist::default(),
    };
    let kept = filter_official(resolved, &blacklist);
    if kept.is_empty() {
        log::warn!("no candidate has LaTeX sources and an allowed official repository");
    }
    let pairs = kept
        .into_iter()
        .filter_map(|c| {
            let repo = repos.remove(&normalize_title(&c.title))?;
            Some((c, repo))
        })
        .collect();
    Ok((n_candidates, pairs))
}

/// Builds (or resumes) the graph for `target` under `cfg.global.kg_path`.
///
/// The target paper is stored with its full technique tree and no code, so
/// agents can plan against it. Corpus papers are grounded in their
/// repositories and pruned. Papers already present are not rebuilt.
pub fn cmd_build(cfg: &Config, target: &TargetSpec, services: &Services) -> Result<BuildReport, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.global.concurrency)
        .build()
        .map_err(|e| PipelineError::at(Stage::Setup, e))?;
    pool.install(|| build_inner(cfg, target, services))
}

fn build_inner(cfg: &Config, spec: &TargetSpec, services: &Services) -> Result<BuildReport, PipelineError> {
    let store = GraphStore::create(&cfg.global.kg_path)?;
    let gw = &services.gateway;
    let mut report = BuildReport::default();

    let (bundle, arxiv_id) = load_target_bundle(spec, services.arxiv.as_ref())?;
    let text = parse_paper(&bundle);
    let title = target_title(&text, spec);
    let target_id = paper_id(arxiv_id.as_deref(), &title);
    report.target = target_id.clone();
    let target = if store.contains(&target_id)? {
        report.papers_resumed += 1;
        store.get_paper(&target_id)?
    } else {
        let meta = metadata_for(title, &text, &bundle, None, gw).map_err(|e| match e {
            PipelineError::Stage { source, .. } => PipelineError::at(Stage::Target, source),
            other => other,
        })?;
        let paper = extract_paper(&target_id, meta, &text, cfg, gw)?;
        store.put_paper(&paper).map_err(|e| PipelineError::at(Stage::Persist, e))?;
        paper
    };
    count_paper(&mut report, &target);

    let (n_candidates, pairs) = curate(&target, &bundle, cfg, services)?;
    report.candidates = n_candidates;
    report.papers_curated = pairs.len();
    let manifest_candidates: Vec<CandidatePaper> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let corpus = CorpusManifest::new(&target_id, &manifest_candidates);
    std::fs::write(store.dir().join(CORPUS_FILE), corpus.to_json())
        .map_err(|e| PipelineError::at(Stage::Persist, e))?;

    let sandbox = Sandbox::new((&cfg.code.sandbox).into(), cfg.code.sandbox.slots);
    for (candidate, repo) in &pairs {
        let id = paper_id(candidate.arxiv_id.as_deref(), &candidate.title);
        if store.contains(&id)? {
            report.papers_resumed += 1;
            count_paper(&mut report, &store.get_paper(&id)?);
            continue;
        }
        match build_corpus_paper(candidate, repo, cfg, services, &sandbox) {
            Ok(built) => {
                store.put_paper(&built.paper).map_err(|e| PipelineError::at(Stage::Persist, e))?;
                report.papers_built += 1;
                report.techniques_pruned += built.pruned;
                count_paper(&mut report, &built.paper);
            }
            Err(e) => {
                let stage = match &e {
                    PipelineError::Stage { stage, .. } => *stage,
                    PipelineError::Invalid(_) => Stage::Pruning,
                    _ => Stage::Persist,
                };
                log::error!("`{}` failed at {stage}: {e}", candidate.title);
                report.failures.push(PaperFailure {
                    title: candidate.title.clone(),
                    stage,
                    message: e.to_string(),
                });
            }
        }
    }
    report.usage = gw.usage();
    Ok(report)
}

/// Counts over a stored graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub papers: usize,
    pub techniques: usize,
    pub techniques_by_category: BTreeMap<Category, usize>,
    pub code_nodes: usize,
    pub executable_code_nodes: usize,
    pub structural_edges: usize,
    pub implementation_edges: usize,
    pub source_tokens: u64,
}

impl GraphStats {
    pub fn of(graph: &Graph) -> Self {
        let mut s = GraphStats {
            papers: graph.paper_count(),
            source_tokens: graph.total_tokens(),
            techniques_by_category: Category::ALL.iter().map(|c| (*c, 0)).collect(),
            ..Default::default()
        };
        for p in graph.papers() {
            s.techniques += p.techniques.len();
            for t in p.techniques.values() {
                *s.techniques_by_category.entry(t.category).or_default() += 1;
            }
            s.code_nodes += p.code_registry.len();
            s.executable_code_nodes += p.code_registry.values().filter(|c| c.executable.is_executable()).count();
        }
        for e in graph.edges() {
            match e.kind {
                EdgeKind::Structural => s.structural_edges += 1,
                EdgeKind::Implementation => s.implementation_edges += 1,
            }
        }
        s
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, label: &str, value: &dyn fmt::Display| writeln!(f, "{:<28}{value}", format!("{label}:"));
        row(f, "papers", &self.papers)?;
        row(f, "techniques", &self.techniques)?;
        for (c, n) in &self.techniques_by_category {
            row(f, &format!("techniques ({c})"), n)?;
        }
        row(f, "code nodes", &self.code_nodes)?;
        row(f, "executable code nodes", &self.executable_code_nodes)?;
        row(f, "structural edges", &self.structural_edges)?;
        row(f, "implementation edges", &self.implementation_edges)?;
        row(f, "source tokens", &self.source_tokens)
    }
}

fn load_graph(kg_dir: &Path) -> Result<Graph, PipelineError> {
    Ok(GraphStore::open(kg_dir)?.load_graph()?)
}

pub fn cmd_stats(kg_dir: &Path) -> Result<GraphStats, PipelineError> {
    Ok(GraphStats::of(&load_graph(kg_dir)?))
}

/// Loads the graph and checks every invariant. Violations, and documents
/// that cannot be loaded as valid papers, are validation failures.
pub fn cmd_validate(kg_dir: &Path) -> Result<GraphStats, PipelineError> {
    let store = GraphStore::open(kg_dir)?;
    let graph = store.load_graph().map_err(|e| match e {
        StoreError::Io { .. } | StoreError::MissingManifest(_) => PipelineError::Store(e),
        other => PipelineError::Unreadable(other),
    })?;
    let violations = validate(&graph);
    if violations.is_empty() {
        Ok(GraphStats::of(&graph))
    } else {
        Err(PipelineError::Invalid(violations))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    /// Overrides `retrieve.max_hits`.
    pub top: Option<usize>,
    pub rerank: bool,
}

/// Threshold-gated retrieval over the stored graph, optionally reranked by
/// the verifier.
pub fn cmd_query(
    kg_dir: &Path,
    text: &str,
    cfg: &Config,
    gateway: &Gateway,
    opts: QueryOptions,
) -> Result<Vec<RetrievalHit>, PipelineError> {
    let graph = load_graph(kg_dir)?;
    let fail = |e: BoxError| PipelineError::at(Stage::Setup, e);
    let index = KgIndex::build(&graph, gateway, &cfg.retrieve.embedding_model).map_err(|e| fail(e.into()))?;
    let mut settings = RetrieveSettings::from(&cfg.retrieve);
    if let Some(n) = opts.top {
        settings.max_hits = n;
    }
    let hits = retrieve_implementations(&graph, &index, text, settings, gateway).map_err(|e| fail(e.into()))?;
    if !opts.rerank || hits.is_empty() {
        return Ok(hits);
    }
    rerank_and_guide(&hits, text, gateway).map_err(|e| fail(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_spec_forms() {
        assert_eq!(TargetSpec::parse("2401.01234"), TargetSpec::ArxivId("2401.01234".into()));
        assert_eq!(TargetSpec::parse("arXiv:2401.01234v2"), TargetSpec::ArxivId("2401.01234v2".into()));
        assert_eq!(TargetSpec::parse("math.GT/0309136"), TargetSpec::ArxivId("math.GT/0309136".into()));
        assert_eq!(TargetSpec::parse("hep-th/9901001"), TargetSpec::ArxivId("hep-th/9901001".into()));
        assert_eq!(TargetSpec::parse("Attention Is All You Need"), TargetSpec::Title("Attention Is All You Need".into()));
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(TargetSpec::parse(dir.path().to_str().unwrap()), TargetSpec::Path(dir.path().to_owned()));
    }

    #[test]
    fn exit_codes() {
        let cfg_err = PipelineError::Config(ConfigError::Parse("x".into()));
        assert_eq!(cfg_err.exit_code(), 1);
        assert_eq!(PipelineError::at(Stage::Curation, "boom").exit_code(), 2);
        assert_eq!(PipelineError::Invalid(vec![]).exit_code(), 3);
        assert_eq!(PipelineError::at(Stage::Codegen, "boom").to_string(), "codegen stage failed: boom");
    }

    #[test]
    fn stats_of_empty_graph_are_zero() {
        let s = GraphStats::of(&Graph::new());
        assert_eq!(s.papers, 0);
        assert_eq!(s.techniques_by_category.len(), 4);
        assert!(s.techniques_by_category.values().all(|n| *n == 0));
    }

    #[test]
    fn stats_and_validate_on_stored_graph() {
        let dir = tempfile::tempdir().unwrap();
        let store = GraphStore::create(dir.path()).unwrap();
        let (roots, techniques, codes) = crate::graph::tests::fixture_parts();
        let mut g = Graph::new();
        g.add_paper("p", PaperMetadata::new("Fixture"), roots, techniques, codes).unwrap();
        store.save_graph(&g).unwrap();
        let s = cmd_stats(dir.path()).unwrap();
        assert_eq!(s.papers, 1);
        assert_eq!(s.techniques, 3);
        assert_eq!(s.structural_edges, 2);
        assert_eq!(s.implementation_edges, 1);
        assert_eq!(s.executable_code_nodes, 1);
        assert_eq!(cmd_validate(dir.path()).unwrap(), s);
    }

    #[test]
    fn missing_graph_dir_is_a_pipeline_failure() {
        let dir = tempfile::tempdir().unwrap();
        let e = cmd_stats(&dir.path().join("nope")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn corrupt_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{ not json").unwrap();
        assert!(cmd_stats(dir.path()).is_err());
        assert_eq!(cmd_validate(dir.path()).unwrap_err().exit_code(), 3);
    }
}
