use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalize_title, CandidatePaper, CurateError, Origin};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    #[serde(default)]
    pub arxiv_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search service unavailable: {0}")]
    Unavailable(String),
    #[error("malformed search response: {0}")]
    Malformed(String),
}

/// Pluggable paper search used for technique keywords.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, SearchError>;
}

/// A client for builds configured without search.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSearch;

impl SearchClient for NoSearch {
    fn search(&self, _query: &str, _limit: usize) -> Result<Vec<SearchHit>, SearchError> {
        Err(SearchError::Unavailable("no search client configured".into()))
    }
}

/// Recorded results keyed by exact query string. Unknown queries return no hits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSearch {
    pub results: BTreeMap<String, Vec<SearchHit>>,
}

impl FixtureSearch {
    pub fn load(path: &Path) -> Result<Self, CurateError> {
        let text = std::fs::read_to_string(path).map_err(|source| CurateError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl SearchClient for FixtureSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, SearchError> {
        Ok(self.results.get(query).map(|h| h.iter().take(limit).cloned().collect()).unwrap_or_default())
    }
}

/// Keyword search against the arXiv listing API.
#[derive(Debug, Clone)]
pub struct ArxivSearch {
    api_url: String,
    agent: ureq::Agent,
}

impl ArxivSearch {
    pub fn new(api_url: &str, timeout: Duration) -> Self {
        Self {
            api_url: api_url.trim_end_matches('/').to_owned(),
            agent: ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into(),
        }
    }
}

impl SearchClient for ArxivSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, SearchError> {
        let body = self
            .agent
            .get(&format!("{}/query", self.api_url))
            .query("search_query", format!("all:\"{query}\""))
            .query("max_results", limit.to_string())
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| SearchError::Unavailable(e.to_string()))?;
        Ok(parse_atom_entries(&body).into_iter().take(limit).collect())
    }
}

/// Title and bare arXiv id of each `<entry>` in an Atom feed.
pub(crate) fn parse_atom_entries(feed: &str) -> Vec<SearchHit> {
    static RE: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    let (entry, id, title) = RE.get_or_init(|| {
        (
            Regex::new(r"(?s)<entry>(.*?)</entry>").unwrap(),
            Regex::new(r"(?s)<id>\s*https?://arxiv\.org/abs/([^<\s]+?)(?:v\d+)?\s*</id>").unwrap(),
            Regex::new(r"(?s)<title[^>]*>(.*?)</title>").unwrap(),
        )
    });
    entry
        .captures_iter(feed)
        .filter_map(|e| {
            let body = e.get(1)?.as_str();
            let title = title.captures(body)?.get(1)?.as_str().split_whitespace().collect::<Vec<_>>().join(" ");
            Some(SearchHit {
                title,
                arxiv_id: id.captures(body).map(|c| c[1].to_owned()),
            })
        })
        .collect()
}

/// Searches each keyword and returns new candidates, skipping titles already
/// present in `existing` or found earlier.
///
/// An unavailable search service is not an error: a warning is logged and
/// the candidates found so far are returned.
pub fn retrieve_by_technique(
    keywords: &[String],
    client: &dyn SearchClient,
    per_keyword: usize,
    existing: &[CandidatePaper],
) -> Result<Vec<CandidatePaper>, CurateError> {
    let keywords: Vec<&str> = keywords.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).collect();
    if keywords.is_empty() {
        return Err(CurateError::EmptyKeywords);
    }
    let mut seen: BTreeSet<String> = existing.iter().map(|c| normalize_title(&c.title)).collect();
    let mut out = Vec::new();
    for kw in keywords {
        let hits = match client.search(kw, per_keyword) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("technique search for `{kw}` failed ({e}); continuing with the references only");
                break;
            }
        };
        for hit in hits {
            let norm = normalize_title(&hit.title);
            if norm.is_empty() || !seen.insert(norm) {
                continue;
            }
            out.push(CandidatePaper {
                arxiv_id: hit.arxiv_id,
                ..CandidatePaper::new(hit.title.trim(), Origin::TechniqueSearch)
            });
        }
    }
    Ok(out)
}
