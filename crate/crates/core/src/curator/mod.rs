//! Corpus curation: expand a target paper into paper and repository pairs
//! by ranking its references and searching for its main techniques, then
//! keep only papers with a verified official repository that is not
//! blacklisted.

mod references;
mod search;
mod sources;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;

pub use references::{extract_references, rank_references};
pub use search::{
    retrieve_by_technique, ArxivSearch, FixtureSearch, NoSearch, SearchClient, SearchError,
    SearchHit,
};
pub use sources::{
    expand_source_archive, find_repo_urls, resolve_sources, ArxivSource, FixtureArxiv,
    FixtureRepos, GitRepos, HttpArxiv, LatexBundle, RepoSnapshot, RepoSource, Resolution,
    SourceError,
};

#[derive(Debug, Error)]
pub enum CurateError {
    #[error("technique keyword list is empty")]
    EmptyKeywords,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("scoring returned {found} scores for {expected} references")]
    ScoreCount { expected: usize, found: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Casefolds, strips punctuation and collapses whitespace.
pub fn normalize_title(title: &str) -> String {
    let mut out = String::with_capacity(title.len());
    for word in title
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercases scheme and host and strips trailing slashes and a `.git` suffix.
/// A bare `host/path` is read as https.
pub fn normalize_url(raw: &str) -> String {
    let raw = raw.trim();
    let with_scheme = if raw.contains("://") {
        raw.to_owned()
    } else {
        format!("https://{raw}")
    };
    match url::Url::parse(&with_scheme) {
        Ok(u) if u.host_str().is_some() => {
            let mut path = u.path().trim_end_matches('/').to_owned();
            if let Some(p) = path.strip_suffix(".git") {
                path = p.to_owned();
            }
            let port = u.port().map(|p| format!(":{p}")).unwrap_or_default();
            format!("{}://{}{port}{path}", u.scheme(), u.host_str().unwrap_or_default())
        }
        _ => raw.trim_end_matches('/').to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Reference,
    TechniqueSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePaper {
    pub title: String,
    pub arxiv_id: Option<String>,
    #[serde(skip)]
    pub latex_source: Option<LatexBundle>,
    pub repo_url: Option<String>,
    pub origin: Origin,
}

impl CandidatePaper {
    pub fn new(title: impl Into<String>, origin: Origin) -> Self {
        Self {
            title: title.into(),
            arxiv_id: None,
            latex_source: None,
            repo_url: None,
            origin,
        }
    }

    pub fn with_arxiv_id(mut self, id: impl Into<String>) -> Self {
        self.arxiv_id = Some(id.into());
        self
    }
}

/// Repository URLs that must never enter the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blacklist {
    entries: BTreeSet<String>,
}

impl Blacklist {
    pub fn new<I, S>(urls: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            entries: urls.into_iter().map(|u| normalize_url(u.as_ref())).collect(),
        }
    }

    /// One URL per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self, CurateError> {
        let text = std::fs::read_to_string(path).map_err(|source| CurateError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, url: &str) -> bool {
        self.entries.contains(&normalize_url(url))
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps candidates that have LaTeX sources and a repository outside the blacklist.
pub fn filter_official(candidates: Vec<CandidatePaper>, blacklist: &Blacklist) -> Vec<CandidatePaper> {
    candidates
        .into_iter()
        .filter(|c| {
            let Some(url) = c.repo_url.as_deref() else {
                log::info!("dropping `{}`: no official repository", c.title);
                return false;
            };
            if blacklist.contains(url) {
                log::warn!("dropping `{}`: repository {url} is blacklisted", c.title);
                return false;
            }
            if c.latex_source.as_ref().is_none_or(LatexBundle::is_empty) {
                log::info!("dropping `{}`: no LaTeX source", c.title);
                return false;
            }
            true
        })
        .collect()
}

/// Drops candidates whose normalized title is already present, keeping first occurrences.
pub fn dedup_candidates(candidates: Vec<CandidatePaper>) -> Vec<CandidatePaper> {
    let mut seen = BTreeSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(normalize_title(&c.title)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub title: String,
    pub arxiv_id: Option<String>,
    pub repo_url: Option<String>,
    pub origin: Origin,
}

/// The curated corpus as written next to the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub target: String,
    pub papers: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn new(target: impl Into<String>, candidates: &[CandidatePaper]) -> Self {
        Self {
            target: target.into(),
            papers: candidates
                .iter()
                .map(|c| CorpusEntry {
                    title: c.title.clone(),
                    arxiv_id: c.arxiv_id.clone(),
                    repo_url: c.repo_url.clone(),
                    origin: c.origin,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CurateError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn bundle() -> LatexBundle {
        LatexBundle::from_files(BTreeMap::from([(
            "main.tex".to_string(),
            "\\documentclass{article}".to_string(),
        )]))
        .unwrap()
    }

    fn complete(title: &str, url: &str) -> CandidatePaper {
        let mut c = CandidatePaper::new(title, Origin::Reference);
        c.repo_url = Some(url.into());
        c.latex_source = Some(bundle());
        c
    }

    #[test]
    fn titles_normalize() {
        assert_eq!(normalize_title("  Attention Is  All-You-Need! "), "attention is all you need");
        assert_eq!(normalize_title("ÉCOLE, Ünïcode"), "école ünïcode");
    }

    #[test]
    fn urls_normalize() {
        assert_eq!(normalize_url("HTTPS://GitHub.com/Org/Repo/"), "https://github.com/Org/Repo");
        assert_eq!(normalize_url("github.com/org/repo.git"), "https://github.com/org/repo");
        assert_eq!(normalize_url("http://example.org:8080/x//"), "http://example.org:8080/x");
    }

    #[test]
    fn blacklist_parses_file_format() {
        let b = Blacklist::parse("# leaked\nhttps://github.com/a/b/\n\n  github.com/c/d.git\n");
        assert_eq!(b.len(), 2);
        assert!(b.contains("https://GITHUB.com/a/b"));
        assert!(b.contains("https://github.com/c/d"));
        assert!(!b.contains("https://github.com/a/c"));
    }

    #[test]
    fn missing_repo_is_excluded() {
        let mut c = complete("A", "https://github.com/x/a");
        c.repo_url = None;
        assert!(filter_official(vec![c], &Blacklist::default()).is_empty());
    }

    #[test]
    fn blacklisted_repo_is_excluded() {
        let c = complete("A", "https://github.com/x/a/");
        let b = Blacklist::new(["https://github.com/X/a".to_string(), "https://github.com/x/a".to_string()]);
        assert!(filter_official(vec![c], &b).is_empty());
    }

    #[test]
    fn complete_pair_is_retained() {
        let c = complete("A", "https://github.com/x/a");
        assert_eq!(filter_official(vec![c.clone()], &Blacklist::default()), vec![c]);
    }

    #[test]
    fn missing_source_is_excluded() {
        let mut c = complete("A", "https://github.com/x/a");
        c.latex_source = None;
        assert!(filter_official(vec![c], &Blacklist::default()).is_empty());
    }

    #[test]
    fn dedup_keeps_first() {
        let out = dedup_candidates(vec![
            CandidatePaper::new("Deep  Nets", Origin::Reference),
            CandidatePaper::new("deep nets!", Origin::TechniqueSearch),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].origin, Origin::Reference);
    }

    #[test]
    fn manifest_round_trips() {
        let m = CorpusManifest::new("target", &[complete("A", "https://github.com/x/a")]);
        assert_eq!(CorpusManifest::from_json(&m.to_json()).unwrap(), m);
    }
}
