use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use thiserror::Error;

use super::search::parse_atom_entries;
use super::{normalize_title, normalize_url, CandidatePaper};
use crate::llm::{slots, Gateway, LlmError, TemplateId};

/// Files larger than this are left out of repository snapshots.
const MAX_REPO_FILE_BYTES: u64 = 1 << 20;
const MAX_ARCHIVE_BYTES: u64 = 256 << 20;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("timed out fetching {0}")]
    Timeout(String),
    #[error("network error fetching {what}: {message}")]
    Network { what: String, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("unreadable source archive: {0}")]
    Archive(String),
    #[error("no .tex file declares \\documentclass")]
    NoMainFile,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("git clone of {url} failed: {message}")]
    Git { url: String, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl SourceError {
    /// Whether retrying the same request later could succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            SourceError::Timeout(_) | SourceError::Network { .. } => true,
            SourceError::Llm(e) => e.is_provider_failure(),
            _ => false,
        }
    }
}

/// The text files of a paper's LaTeX source, with its main file identified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatexBundle {
    files: BTreeMap<String, String>,
    main_file: String,
}

fn strip_comment(line: &str) -> &str {
    let b = line.as_bytes();
    for i in 0..b.len() {
        if b[i] == b'%' && (i == 0 || b[i - 1] != b'\\') {
            return &line[..i];
        }
    }
    line
}

fn declares(text: &str, command: &str) -> bool {
    text.lines().any(|l| strip_comment(l).contains(command))
}

impl LatexBundle {
    /// Picks the main file: a `.tex` file declaring `\documentclass`,
    /// preferring one with `\begin{document}`, then the shallowest path.
    pub fn from_files(files: BTreeMap<String, String>) -> Result<Self, SourceError> {
        let main_file = files
            .iter()
            .filter(|(p, t)| p.ends_with(".tex") && declares(t, "\\documentclass"))
            .min_by_key(|(p, t)| (!declares(t, "\\begin{document}"), p.matches('/').count(), p.as_str()))
            .map(|(p, _)| p.clone())
            .ok_or(SourceError::NoMainFile)?;
        Ok(Self { files, main_file })
    }

    /// Loads every UTF-8 file below `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, SourceError> {
        Self::from_files(read_text_tree(dir, u64::MAX)?)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn main_file(&self) -> &str {
        &self.main_file
    }

    pub fn main_text(&self) -> &str {
        &self.files[&self.main_file]
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    /// All `.bbl` files concatenated in path order.
    pub fn bbl_text(&self) -> String {
        self.files
            .iter()
            .filter(|(p, _)| p.ends_with(".bbl"))
            .map(|(_, t)| t.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Expands an arXiv source download: a gzipped or plain tarball, or a
/// single (possibly gzipped) `.tex` file.
pub fn expand_source_archive(bytes: &[u8]) -> Result<LatexBundle, SourceError> {
    let data = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .take(MAX_ARCHIVE_BYTES)
            .read_to_end(&mut out)
            .map_err(|e| SourceError::Archive(e.to_string()))?;
        out
    } else {
        bytes.to_vec()
    };
    let is_tar = data.len() > 262 && &data[257..262] == b"ustar";
    if !is_tar {
        let text = String::from_utf8(data).map_err(|_| SourceError::Archive("not a tarball or text file".into()))?;
        return LatexBundle::from_files(BTreeMap::from([("main.tex".to_string(), text)]));
    }
    let mut files = BTreeMap::new();
    let mut archive = tar::Archive::new(&data[..]);
    for entry in archive.entries().map_err(|e| SourceError::Archive(e.to_string()))? {
        let mut entry = entry.map_err(|e| SourceError::Archive(e.to_string()))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = entry.path().map_err(|e| SourceError::Archive(e.to_string()))?.into_owned();
        // Entries are read into memory, never unpacked; escaping paths are skipped anyway.
        if path.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            continue;
        }
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf).map_err(|e| SourceError::Archive(e.to_string()))?;
        if let Ok(text) = String::from_utf8(buf) {
            files.insert(slash_path(&path), text);
        }
    }
    LatexBundle::from_files(files)
}

fn slash_path(p: &Path) -> String {
    p.components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn read_text_tree(root: &Path, max_file: u64) -> Result<BTreeMap<String, String>, SourceError> {
    let mut files = BTreeMap::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| SourceError::Io {
            path: root.to_owned(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() || entry.metadata().map(|m| m.len() > max_file).unwrap_or(true) {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|source| SourceError::Io {
            path: entry.path().to_owned(),
            source,
        })?;
        if let Ok(text) = String::from_utf8(bytes) {
            let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
            files.insert(slash_path(rel), text);
        }
    }
    Ok(files)
}

/// Text files of a repository checkout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    pub url: String,
    pub files: BTreeMap<String, String>,
}

impl RepoSnapshot {
    /// Loads UTF-8 files below `dir`, skipping hidden entries and files over 1 MiB.
    pub fn load_dir(url: &str, dir: &Path) -> Result<Self, SourceError> {
        Ok(Self {
            url: normalize_url(url),
            files: read_text_tree(dir, MAX_REPO_FILE_BYTES)?,
        })
    }

    /// Last path segment of the URL.
    pub fn name(&self) -> &str {
        self.url.rsplit('/').next().unwrap_or(&self.url)
    }

    pub fn readme(&self) -> Option<&str> {
        self.files
            .iter()
            .find(|(p, _)| !p.contains('/') && p.to_lowercase().starts_with("readme"))
            .map(|(_, t)| t.as_str())
    }

    pub fn file_tree(&self) -> String {
        self.files.keys().map(|p| format!("{p}\n")).collect()
    }
}

/// arXiv lookups and source downloads.
pub trait ArxivSource: Send + Sync {
    /// The arXiv id of the paper with this title, if one can be found.
    fn lookup(&self, title: &str) -> Result<Option<String>, SourceError>;
    fn fetch(&self, arxiv_id: &str) -> Result<LatexBundle, SourceError>;
}

pub trait RepoSource: Send + Sync {
    fn fetch(&self, url: &str) -> Result<RepoSnapshot, SourceError>;
}

/// Recorded arXiv: `index.json` maps titles to ids; sources live next to it
/// as `<id>.tar.gz`, `<id>.tar`, `<id>.tex` or an `<id>/` directory
/// (with `/` in old-style ids written as `_`).
#[derive(Debug, Clone)]
pub struct FixtureArxiv {
    root: PathBuf,
    index: BTreeMap<String, String>,
}

impl FixtureArxiv {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SourceError> {
        let root = root.into();
        let path = root.join("index.json");
        let index: BTreeMap<String, String> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| SourceError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(SourceError::Io { path, source }),
        };
        Ok(Self {
            index: index.into_iter().map(|(t, id)| (normalize_title(&t), id)).collect(),
            root,
        })
    }
}

impl ArxivSource for FixtureArxiv {
    fn lookup(&self, title: &str) -> Result<Option<String>, SourceError> {
        Ok(self.index.get(&normalize_title(title)).cloned())
    }

    fn fetch(&self, arxiv_id: &str) -> Result<LatexBundle, SourceError> {
        let stem = arxiv_id.replace('/', "_");
        for ext in ["tar.gz", "tar", "tex"] {
            let p = self.root.join(format!("{stem}.{ext}"));
            if p.is_file() {
                let bytes = std::fs::read(&p).map_err(|source| SourceError::Io { path: p, source })?;
                return expand_source_archive(&bytes);
            }
        }
        let dir = self.root.join(&stem);
        if dir.is_dir() {
            return LatexBundle::load_dir(&dir);
        }
        Err(SourceError::NotFound(format!("arXiv source {arxiv_id}")))
    }
}

/// Recorded repositories: `https://host/org/name` is read from `<root>/org/name`.
#[derive(Debug, Clone)]
pub struct FixtureRepos {
    root: PathBuf,
}

impl FixtureRepos {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl RepoSource for FixtureRepos {
    fn fetch(&self, url: &str) -> Result<RepoSnapshot, SourceError> {
        let norm = normalize_url(url);
        let path = url::Url::parse(&norm).map(|u| u.path().trim_start_matches('/').to_owned()).unwrap_or_default();
        let dir = self.root.join(&path);
        if path.is_empty() || path.split('/').any(|s| s == "..") || !dir.is_dir() {
            return Err(SourceError::NotFound(format!("repository {url}")));
        }
        RepoSnapshot::load_dir(&norm, &dir)
    }
}

/// Live arXiv over HTTP.
#[derive(Debug, Clone)]
pub struct HttpArxiv {
    base_url: String,
    api_url: String,
    agent: ureq::Agent,
}

impl HttpArxiv {
    pub fn new(base_url: &str, api_url: &str, timeout: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_url: api_url.trim_end_matches('/').to_owned(),
            agent: ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into(),
        }
    }
}

fn http_error(what: &str, e: ureq::Error) -> SourceError {
    match e {
        ureq::Error::Timeout(_) => SourceError::Timeout(what.to_owned()),
        ureq::Error::StatusCode(404) => SourceError::NotFound(what.to_owned()),
        other => SourceError::Network {
            what: what.to_owned(),
            message: other.to_string(),
        },
    }
}

impl ArxivSource for HttpArxiv {
    fn lookup(&self, title: &str) -> Result<Option<String>, SourceError> {
        let what = format!("arXiv lookup for `{title}`");
        let feed = self
            .agent
            .get(&format!("{}/query", self.api_url))
            .query("search_query", format!("ti:\"{}\"", normalize_title(title)))
            .query("max_results", "5")
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| http_error(&what, e))?;
        let want = normalize_title(title);
        Ok(parse_atom_entries(&feed)
            .into_iter()
            .find(|h| normalize_title(&h.title) == want)
            .and_then(|h| h.arxiv_id))
    }

    fn fetch(&self, arxiv_id: &str) -> Result<LatexBundle, SourceError> {
        let what = format!("arXiv source {arxiv_id}");
        let bytes = self
            .agent
            .get(&format!("{}/e-print/{arxiv_id}", self.base_url))
            .call()
            .and_then(|mut r| r.body_mut().with_config().limit(MAX_ARCHIVE_BYTES).read_to_vec())
            .map_err(|e| http_error(&what, e))?;
        expand_source_archive(&bytes)
    }
}

/// Shallow `git clone` into a temporary directory.
#[derive(Debug, Clone)]
pub struct GitRepos {
    timeout: Duration,
}

impl GitRepos {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout }
    }
}

impl RepoSource for GitRepos {
    fn fetch(&self, url: &str) -> Result<RepoSnapshot, SourceError> {
        let norm = normalize_url(url);
        let tmp = tempfile::tempdir().map_err(|source| SourceError::Io {
            path: std::env::temp_dir(),
            source,
        })?;
        let dest = tmp.path().join("repo");
        let mut child = Command::new("git")
            .args(["clone", "--depth", "1", "--quiet", &norm])
            .arg(&dest)
            .env("GIT_TERMINAL_PROMPT", "0")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SourceError::Git {
                url: norm.clone(),
                message: e.to_string(),
            })?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break s,
                Ok(None) if start.elapsed() > self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SourceError::Timeout(format!("clone of {norm}")));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(50)),
                Err(e) => {
                    return Err(SourceError::Git {
                        url: norm,
                        message: e.to_string(),
                    })
                }
            }
        };
        if !status.success() {
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                let _ = s.read_to_string(&mut err);
            }
            return Err(SourceError::Git {
                url: norm,
                message: err.trim().to_owned(),
            });
        }
        RepoSnapshot::load_dir(&norm, &dest)
    }
}

/// GitHub repository URLs mentioned in the sources, main file first, in order of appearance.
pub fn find_repo_urls(bundle: &LatexBundle) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)(?:https?://)?(?:www\.)?github\.com/([A-Za-z0-9_.-]+)/([A-Za-z0-9_-]+(?:\.[A-Za-z0-9_-]+)*)").unwrap()
    });
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let texts = std::iter::once(bundle.main_text()).chain(
        bundle
            .files()
            .iter()
            .filter(|(p, _)| *p != bundle.main_file() && p.ends_with(".tex"))
            .map(|(_, t)| t.as_str()),
    );
    for text in texts {
        for line in text.lines() {
            for c in re.captures_iter(strip_comment(line)) {
                let url = normalize_url(&format!("https://github.com/{}/{}", &c[1], &c[2]));
                if seen.insert(url.clone()) {
                    out.push(url);
                }
            }
        }
    }
    out
}

/// Outcome of resolving one candidate. Failures are recorded, never fatal.
#[derive(Debug)]
pub struct Resolution {
    pub candidate: CandidatePaper,
    /// The verified repository, when one was found.
    pub repo: Option<RepoSnapshot>,
    pub errors: Vec<SourceError>,
}

/// Attaches LaTeX sources and a verified official repository to `candidate`.
///
/// A repository counts as official when the model, shown only its README,
/// names a paper whose normalized title equals the candidate's.
pub fn resolve_sources(
    mut candidate: CandidatePaper,
    arxiv: &dyn ArxivSource,
    repos: &dyn RepoSource,
    gateway: &Gateway,
) -> Resolution {
    let mut errors = Vec::new();
    if candidate.arxiv_id.is_none() {
        match arxiv.lookup(&candidate.title) {
            Ok(id) => candidate.arxiv_id = id,
            Err(e) => errors.push(e),
        }
    }
    if candidate.latex_source.is_none() {
        if let Some(id) = candidate.arxiv_id.clone() {
            match arxiv.fetch(&id) {
                Ok(b) => candidate.latex_source = Some(b),
                Err(e) => errors.push(e),
            }
        }
    }
    let Some(bundle) = candidate.latex_source.as_ref() else {
        return Resolution {
            candidate,
            repo: None,
            errors,
        };
    };
    let mut urls: Vec<String> = candidate.repo_url.take().map(|u| normalize_url(&u)).into_iter().collect();
    for u in find_repo_urls(bundle) {
        if !urls.contains(&u) {
            urls.push(u);
        }
    }
    let want = normalize_title(&candidate.title);
    let mut repo = None;
    for url in urls {
        let snap = match repos.fetch(&url) {
            Ok(s) => s,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let Some(readme) = snap.readme() else { continue };
        let named = gateway.chat_text(
            TemplateId::AssociatedPaper,
            &slots([("name", snap.name().to_owned()), ("readme", readme.to_owned())]),
        );
        match named {
            Ok(Some(title)) if normalize_title(&title) == want => {
                candidate.repo_url = Some(url);
                repo = Some(snap);
                break;
            }
            Ok(_) => log::debug!("{url} is not the official repository of `{}`", candidate.title),
            Err(e) => errors.push(e.into()),
        }
    }
    Resolution {
        candidate,
        repo,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curator::Origin;
    use crate::llm::{LlmProfile, StubProvider};
    use std::sync::Arc;

    fn tarball(files: &[(&str, &str)]) -> Vec<u8> {
        let mut builder = tar::Builder::new(flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default()));
        for (path, body) in files {
            let mut h = tar::Header::new_gnu();
            h.set_size(body.len() as u64);
            h.set_mode(0o644);
            h.set_cksum();
            builder.append_data(&mut h, path, body.as_bytes()).unwrap();
        }
        builder.into_inner().unwrap().finish().unwrap()
    }

    #[test]
    fn main_file_is_the_one_with_documentclass() {
        let bytes = tarball(&[
            ("sections/intro.tex", "\\section{Intro} text"),
            ("paper.tex", "% \\documentclass{old}\n\\documentclass{article}\n\\begin{document}\\input{sections/intro}\\end{document}"),
            ("paper.bbl", "\\bibitem{x} X"),
            ("template.tex", "\\documentclass{article}"),
        ]);
        let b = expand_source_archive(&bytes).unwrap();
        assert_eq!(b.main_file(), "paper.tex");
        assert_eq!(b.files().len(), 4);
        assert_eq!(b.bbl_text(), "\\bibitem{x} X");
    }

    #[test]
    fn commented_documentclass_does_not_count() {
        let bytes = tarball(&[("a.tex", "% \\documentclass{article}")]);
        assert!(matches!(expand_source_archive(&bytes), Err(SourceError::NoMainFile)));
    }

    #[test]
    fn single_file_source() {
        let b = expand_source_archive(b"\\documentclass{article}\n").unwrap();
        assert_eq!(b.main_file(), "main.tex");
    }

    #[test]
    fn repo_urls_in_order() {
        let b = LatexBundle::from_files(BTreeMap::from([
            (
                "main.tex".to_string(),
                "\\documentclass{x}\nCode: \\url{https://github.com/Org/Widget.}\n% https://github.com/hidden/repo\nsee github.com/org/gizmo.git and https://github.com/Org/Widget/".to_string(),
            ),
        ]))
        .unwrap();
        assert_eq!(find_repo_urls(&b), vec!["https://github.com/Org/Widget", "https://github.com/org/gizmo"]);
    }

    struct Arxiv(Result<(), ()>);
    impl ArxivSource for Arxiv {
        fn lookup(&self, _t: &str) -> Result<Option<String>, SourceError> {
            Ok(Some("2101.00001".into()))
        }
        fn fetch(&self, id: &str) -> Result<LatexBundle, SourceError> {
            match self.0 {
                Ok(()) => LatexBundle::from_files(BTreeMap::from([(
                    "m.tex".to_string(),
                    "\\documentclass{a}\nhttps://github.com/o/widget".to_string(),
                )])),
                Err(()) => Err(SourceError::Timeout(id.into())),
            }
        }
    }

    struct Repos(&'static str);
    impl RepoSource for Repos {
        fn fetch(&self, url: &str) -> Result<RepoSnapshot, SourceError> {
            Ok(RepoSnapshot {
                url: url.into(),
                files: BTreeMap::from([("README.md".to_string(), self.0.to_string())]),
            })
        }
    }

    fn gateway(answer: &str) -> Gateway {
        Gateway::single(
            Arc::new(StubProvider::new().with_response(TemplateId::AssociatedPaper, answer)),
            LlmProfile::default(),
        )
    }

    #[test]
    fn happy_path_attaches_source_and_repo() {
        let c = CandidatePaper::new("Widget Pipelines", Origin::Reference);
        let r = resolve_sources(c, &Arxiv(Ok(())), &Repos("# Widget"), &gateway("```Widget  pipelines```"));
        assert!(r.errors.is_empty());
        assert_eq!(r.candidate.arxiv_id.as_deref(), Some("2101.00001"));
        assert!(r.candidate.latex_source.is_some());
        assert_eq!(r.candidate.repo_url.as_deref(), Some("https://github.com/o/widget"));
        assert!(r.repo.is_some());
    }

    #[test]
    fn readme_naming_no_paper_leaves_repo_absent() {
        let c = CandidatePaper::new("Widget Pipelines", Origin::Reference);
        let r = resolve_sources(c, &Arxiv(Ok(())), &Repos("a utility library"), &gateway("```None```"));
        assert!(r.candidate.repo_url.is_none());
        assert!(r.candidate.latex_source.is_some());
    }

    #[test]
    fn timeout_keeps_candidate_and_records_retryable_error() {
        let c = CandidatePaper::new("Widget Pipelines", Origin::Reference).with_arxiv_id("2101.00001");
        let r = resolve_sources(c.clone(), &Arxiv(Err(())), &Repos(""), &gateway("```None```"));
        assert_eq!(r.candidate, c);
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0].is_retryable());
    }
}
