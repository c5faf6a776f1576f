//! Code modularization: for each technique, locate relevant repository
//! code, have the model synthesize a self-contained code node, check its
//! fidelity, then run and repair it in the sandbox until it executes.

mod sandbox;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::RepoSnapshot;
use crate::graph::{code_id, CodeNode, Executability, PaperNode, Provenance, TechniqueNode};
use crate::llm::{slots, Answer, CodeWithDocs, Gateway, LlmError, TemplateId};
use crate::rag::{build_index, group_by_file, select_top_files, split_document, RagError, RerankContext, VectorIndex};

pub use sandbox::{run_sandbox, Sandbox, SandboxError, SandboxLimits, SandboxResult};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("max_iters must be at least 1")]
    InvalidIterations,
}

/// One selected file as it appears in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetFile {
    pub path: String,
    pub content: String,
    /// Bytes removed to respect the prompt budget.
    pub elided: usize,
}

/// Code located for one technique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetSet {
    pub repo_url: String,
    /// Files of the retrieved chunks in order of best chunk rank.
    pub retrieved_files: Vec<String>,
    /// Files kept by the re-ranker, in its order.
    pub files: Vec<SnippetFile>,
}

impl SnippetSet {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.files.iter().any(|f| f.elided > 0)
    }

    /// The prompt payload. Its length never exceeds the budget it was built with.
    pub fn payload(&self) -> String {
        self.files.iter().map(|f| file_block(&f.path, &f.content)).collect()
    }

    pub fn provenance(&self) -> Vec<Provenance> {
        self.files
            .iter()
            .map(|f| Provenance {
                repo_url: self.repo_url.clone(),
                file_path: f.path.clone(),
            })
            .collect()
    }
}

fn file_block(path: &str, content: &str) -> String {
    format!("### File: {path}\n{content}\n\n")
}

pub(crate) fn elision_marker(path: &str, elided: usize) -> String {
    format!("\n# ... [{elided} bytes elided from {path}] ...")
}

fn floor_char_boundary(s: &str, mut i: usize) -> usize {
    i = i.min(s.len());
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Fits whole files into `max_bytes`, sharing the budget evenly and
/// truncating the largest files with a marker. Files that cannot fit even
/// a marker are dropped.
pub fn fit_payload(files: Vec<(String, String)>, max_bytes: usize) -> Vec<SnippetFile> {
    let overhead = |p: &str| file_block(p, "").len();
    let mut budget = max_bytes;
    let mut kept: Vec<(String, String)> = Vec::new();
    for (p, c) in files {
        if overhead(&p) <= budget {
            budget -= overhead(&p);
            kept.push((p, c));
        }
    }
    // Smallest first so leftover share flows to larger files.
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by_key(|&i| (kept[i].1.len(), i));
    let mut out: Vec<Option<SnippetFile>> = vec![None; kept.len()];
    let mut remaining = kept.len();
    for i in order {
        let (path, content) = &kept[i];
        let share = budget / remaining;
        remaining -= 1;
        let file = if content.len() <= share {
            SnippetFile {
                path: path.clone(),
                content: content.clone(),
                elided: 0,
            }
        } else {
            let reserve = elision_marker(path, content.len()).len();
            if share < reserve {
                continue;
            }
            let head = floor_char_boundary(content, share - reserve);
            let elided = content.len() - head;
            SnippetFile {
                path: path.clone(),
                content: format!("{}{}", &content[..head], elision_marker(path, elided)),
                elided,
            }
        };
        budget -= file.content.len();
        out[i] = Some(file);
    }
    out.into_iter().flatten().collect()
}

/// Chunks every file of the repository and embeds the chunks.
pub fn build_repo_index(
    repo: &RepoSnapshot,
    gateway: &Gateway,
    model: &str,
    chunk_size: usize,
    overlap: usize,
) -> Result<VectorIndex, CodegenError> {
    let mut chunks = Vec::new();
    for (path, text) in &repo.files {
        chunks.extend(split_document(&repo.url, Some(path), text, chunk_size, overlap)?);
    }
    Ok(build_index(chunks, gateway, model)?)
}

#[derive(Debug, Clone, Copy)]
pub struct LocateSettings {
    pub top_k: usize,
    pub top_files: usize,
    pub max_prompt_bytes: usize,
}

/// The technique as the prompts show it.
pub fn describe_technique(t: &TechniqueNode) -> String {
    format!("{}: {}", t.name, t.definition)
}

/// Retrieves chunks similar to the technique's definition, lets the model
/// pick the implementing files, and packs them within the prompt budget.
pub fn locate_snippets(
    technique: &TechniqueNode,
    repo: &RepoSnapshot,
    index: &VectorIndex,
    context: RerankContext<'_>,
    settings: LocateSettings,
    gateway: &Gateway,
) -> Result<SnippetSet, CodegenError> {
    let hits = index.query(gateway, &describe_technique(technique), settings.top_k)?;
    let retrieved_files: Vec<String> = group_by_file(&hits).into_iter().map(|(p, _)| p).collect();
    let chosen = select_top_files(&hits, context, settings.top_files, gateway)?;
    let files = chosen
        .into_iter()
        .filter_map(|p| repo.files.get(&p).map(|c| (p, c.clone())))
        .collect();
    Ok(SnippetSet {
        repo_url: repo.url.clone(),
        retrieved_files,
        files: fit_payload(files, settings.max_prompt_bytes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugStep {
    pub result: SandboxResult,
    /// What happened after this run.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub implementation: String,
    pub test_script: String,
    pub documentation: String,
    pub history: Vec<DebugStep>,
}

impl CodeCandidate {
    pub fn from_answer(c: CodeWithDocs) -> Self {
        Self {
            implementation: c.implementation,
            test_script: c.test_script,
            documentation: c.documentation,
            history: Vec::new(),
        }
    }

    pub fn program(&self) -> String {
        crate::graph::model::join_program(&self.implementation, &self.test_script)
    }
}

/// Context about the paper the technique comes from.
#[derive(Debug, Clone, Copy)]
pub struct PaperContext<'a> {
    pub title: &'a str,
    pub abstract_text: &'a str,
}

/// Asks the model for a code node. Leaf techniques use the leaf prompt;
/// techniques with implemented components use the composite prompt, which
/// includes the components' implementations. Returns `None` when there is
/// nothing to build from or the model finds no implementation.
pub fn synthesize_code_node(
    technique: &TechniqueNode,
    paper: PaperContext<'_>,
    snippets: &SnippetSet,
    sub_nodes: &[(&TechniqueNode, &CodeNode)],
    gateway: &Gateway,
) -> Result<Option<CodeCandidate>, CodegenError> {
    if snippets.is_empty() && sub_nodes.is_empty() {
        return Ok(None);
    }
    let mut s = slots([
        ("paper", paper.title.to_owned()),
        ("abstract", paper.abstract_text.to_owned()),
        ("technique", describe_technique(technique)),
        ("file_snippets", snippets.payload()),
    ]);
    let template = if sub_nodes.is_empty() {
        TemplateId::LeafCode
    } else {
        let rendered: String = sub_nodes
            .iter()
            .map(|(t, c)| format!("### Sub-technique: {}\n{}\n```python\n{}```\n\n", t.name, t.definition, c.implementation))
            .collect();
        s.insert("sub_techniques".into(), rendered);
        TemplateId::CompositeCode
    };
    match gateway.chat(template, &s)? {
        Answer::Code(c) => Ok(c.map(CodeCandidate::from_answer)),
        _ => Err(LlmError::UnexpectedAnswer {
            template,
            expected: "code with documentation",
        }
        .into()),
    }
}

/// Asks the model whether the candidate faithfully implements the technique.
/// Provider failures count as a rejection.
pub fn verify_code(
    technique: &TechniqueNode,
    paper_title: &str,
    snippets: &SnippetSet,
    candidate: &CodeCandidate,
    gateway: &Gateway,
) -> bool {
    let verdict = gateway.chat_bool(
        TemplateId::VerifyCode,
        &slots([
            ("paper", paper_title.to_owned()),
            ("technique", describe_technique(technique)),
            ("file_snippets", snippets.payload()),
            ("code", candidate.program()),
        ]),
    );
    verdict.unwrap_or_else(|e| {
        log::warn!("verification of `{}` failed, treating as rejected: {e}", technique.name);
        false
    })
}

/// Runs the candidate and, on failure, feeds the output back to the model
/// for a revision, up to `max_iters` runs. Returns whether the last run
/// passed. The history holds one entry per run.
pub fn self_debug(
    mut candidate: CodeCandidate,
    technique: &TechniqueNode,
    sandbox: &Sandbox,
    gateway: &Gateway,
    max_iters: u32,
) -> Result<(CodeCandidate, bool), CodegenError> {
    if max_iters == 0 {
        return Err(CodegenError::InvalidIterations);
    }
    for run in 1..=max_iters {
        let result = sandbox.run(&candidate.program())?;
        if result.success() {
            candidate.history.push(DebugStep {
                result,
                note: "passed".into(),
            });
            return Ok((candidate, true));
        }
        if run == max_iters {
            candidate.history.push(DebugStep {
                result,
                note: "iteration limit reached".into(),
            });
            break;
        }
        let revision = gateway.chat(
            TemplateId::DebugCode,
            &slots([
                ("technique", describe_technique(technique)),
                ("code", candidate.program()),
                ("exit_status", if result.timed_out { "timed out".into() } else { result.exit_status.to_string() }),
                ("stdout", result.stdout.clone()),
                ("stderr", result.stderr.clone()),
            ]),
        );
        match revision {
            Ok(Answer::Code(Some(fix))) => {
                candidate.history.push(DebugStep {
                    result,
                    note: format!("revised after run {run}"),
                });
                candidate.implementation = fix.implementation;
                candidate.test_script = fix.test_script;
                if !fix.documentation.trim().is_empty() {
                    candidate.documentation = fix.documentation;
                }
            }
            Ok(_) => {
                candidate.history.push(DebugStep {
                    result,
                    note: "model declined to revise".into(),
                });
                break;
            }
            Err(e) => {
                log::warn!("debugging `{}` stopped: {e}", technique.name);
                candidate.history.push(DebugStep {
                    result,
                    note: format!("provider failure: {e}"),
                });
                break;
            }
        }
    }
    Ok((candidate, false))
}

#[derive(Debug, Clone, Copy)]
pub struct CodegenSettings {
    pub locate: LocateSettings,
    pub exec_check: bool,
    pub max_iters: u32,
}

/// Why a technique ended up without a code node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ungrounded {
    NoSnippets,
    NoCandidate,
    Rejected,
    NotExecutable,
}

/// Result of grounding one technique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Grounding {
    Code(CodeNode),
    Ungrounded(Ungrounded),
}

/// The repository and its index, shared by every technique of a paper.
#[derive(Debug, Clone, Copy)]
pub struct RepoContext<'a> {
    pub repo: &'a RepoSnapshot,
    pub index: &'a VectorIndex,
    pub overview: &'a str,
}

/// Runs locate, synthesize, verify and (when enabled) self-debug for one
/// technique. `sub_nodes` are the code nodes already built for its
/// components.
#[allow(clippy::too_many_arguments)]
pub fn ground_technique(
    technique: &TechniqueNode,
    paper_id: &str,
    paper: PaperContext<'_>,
    repo: RepoContext<'_>,
    sub_nodes: &[(&TechniqueNode, &CodeNode)],
    sandbox: &Sandbox,
    gateway: &Gateway,
    settings: CodegenSettings,
) -> Result<Grounding, CodegenError> {
    let description = describe_technique(technique);
    let context = RerankContext {
        paper_title: paper.title,
        technique: &description,
        overview: repo.overview,
    };
    let snippets = locate_snippets(technique, repo.repo, repo.index, context, settings.locate, gateway)?;
    if snippets.is_empty() && sub_nodes.is_empty() {
        return Ok(Grounding::Ungrounded(Ungrounded::NoSnippets));
    }
    let Some(candidate) = synthesize_code_node(technique, paper, &snippets, sub_nodes, gateway)? else {
        return Ok(Grounding::Ungrounded(Ungrounded::NoCandidate));
    };
    if !verify_code(technique, paper.title, &snippets, &candidate, gateway) {
        return Ok(Grounding::Ungrounded(Ungrounded::Rejected));
    }
    let (candidate, executable) = if settings.exec_check {
        let (c, ok) = self_debug(candidate, technique, sandbox, gateway, settings.max_iters)?;
        if !ok {
            return Ok(Grounding::Ungrounded(Ungrounded::NotExecutable));
        }
        (c, Executability::Passed)
    } else {
        (candidate, Executability::Unchecked)
    };
    let mut provenance = snippets.provenance();
    for (_, c) in sub_nodes {
        for p in &c.provenance {
            if !provenance.contains(p) {
                provenance.push(p.clone());
            }
        }
    }
    Ok(Grounding::Code(CodeNode {
        id: code_id(paper_id, &technique.name),
        implementation: candidate.implementation,
        test_script: candidate.test_script,
        documentation: candidate.documentation,
        executable,
        provenance,
        debug_iterations: candidate.history.len() as u32,
    }))
}

/// Per-paper codegen outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodegenReport {
    pub grounded: Vec<String>,
    pub ungrounded: BTreeMap<String, Ungrounded>,
    /// Techniques whose attempt failed with an error; they stay ungrounded.
    pub failed: BTreeMap<String, String>,
}

/// Grounds every Methodology and Technique of `paper`, deepest components first so composite
/// techniques can reuse their components' code. Techniques of one depth run
/// concurrently. Code nodes and references are written into `paper`.
pub fn ground_paper(
    paper: &mut PaperNode,
    repo: RepoContext<'_>,
    sandbox: &Sandbox,
    gateway: &Gateway,
    settings: CodegenSettings,
) -> CodegenReport {
    let mut depth_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut stack: Vec<(String, usize)> = paper.technique_roots.iter().map(|r| (r.clone(), 0)).collect();
    while let Some((id, d)) = stack.pop() {
        if let Some(t) = paper.techniques.get(&id) {
            stack.extend(t.children.iter().map(|c| (c.clone(), d + 1)));
        }
        depth_of.insert(id, d);
    }
    let max_depth = depth_of.values().copied().max().unwrap_or(0);
    let mut report = CodegenReport::default();
    let ctx = PaperContext {
        title: &paper.metadata.title.clone(),
        abstract_text: &paper.metadata.abstract_text.clone(),
    };
    for depth in (0..=max_depth).rev() {
        let level: Vec<&String> = depth_of
            .iter()
            .filter(|(id, d)| **d == depth && paper.techniques.get(*id).is_some_and(|t| t.category.is_implementable()))
            .map(|(id, _)| id)
            .collect();
        let snapshot: &PaperNode = paper;
        let results: Vec<(String, Result<Grounding, CodegenError>)> = level
            .par_iter()
            .map(|id| {
                let t = &snapshot.techniques[*id];
                let subs: Vec<(&TechniqueNode, &CodeNode)> = t
                    .children
                    .iter()
                    .filter_map(|c| {
                        let child = snapshot.techniques.get(c)?;
                        let code = child.code_refs.first().and_then(|r| snapshot.code_registry.get(r))?;
                        Some((child, code))
                    })
                    .collect();
                let g = ground_technique(t, &snapshot.id, ctx, repo, &subs, sandbox, gateway, settings);
                ((*id).clone(), g)
            })
            .collect();
        for (id, r) in results {
            match r {
                Ok(Grounding::Code(node)) => {
                    let t = paper.techniques.get_mut(&id).expect("technique exists");
                    t.code_refs = vec![node.id.clone()];
                    paper.code_registry.insert(node.id.clone(), node);
                    report.grounded.push(id);
                }
                Ok(Grounding::Ungrounded(why)) => {
                    report.ungrounded.insert(id, why);
                }
                Err(e) => {
                    log::warn!("grounding {id} failed: {e}");
                    report.failed.insert(id, e.to_string());
                }
            }
        }
    }
    report
}
