//! Configuration document, one TOML file with `code`, `paper`, `retrieve`
//! and `global` sections plus corpus, provider and profile settings.
//!
//! ```toml
//! [code]
//! exec_check_code = true
//! [code.text_splitter]
//! chunk_size = 350
//! chunk_overlap = 100
//! [code.retriever.faiss]
//! top_k = 10
//! [retrieve]
//! technique_similarity = 0.6
//! [global]
//! kg_path = "storage/kg"
//! ```
//!
//! Unknown keys are rejected with the offending key in the message.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmProfile;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            chunk_size: 350,
            chunk_overlap: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaissConfig {
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRerankConfig {
    pub top_files: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeRetrieverConfig {
    pub faiss: FaissConfig,
    pub llm: FileRerankConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    /// Command prefix; the script path is appended.
    pub interpreter: Vec<String>,
    /// File name the program is written to inside the sandbox.
    pub script_name: String,
    pub timeout_secs: u64,
    pub max_debug_iters: u32,
    pub stream_cap_bytes: usize,
    pub allow_network: bool,
    /// Environment variables passed through to the child.
    pub env_allowlist: Vec<String>,
    /// Maximum concurrently running sandboxes.
    pub slots: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into()],
            script_name: "main.py".into(),
            timeout_secs: 60,
            max_debug_iters: 3,
            stream_cap_bytes: 64 * 1024,
            allow_network: false,
            env_allowlist: vec!["PATH".into(), "HOME".into(), "LANG".into(), "LC_ALL".into()],
            slots: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeConfig {
    pub embedder: EmbedderConfig,
    pub text_splitter: SplitterConfig,
    pub retriever: CodeRetrieverConfig,
    pub exec_check_code: bool,
    pub sandbox: SandboxConfig,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderConfig {
                model: "text-embedding-3-small".into(),
            },
            text_splitter: SplitterConfig::default(),
            retriever: CodeRetrieverConfig::default(),
            exec_check_code: true,
            sandbox: SandboxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaperRetrieverConfig {
    pub faiss: FaissConfig,
    /// Excerpts scoring below this are not used for enrichment.
    pub min_similarity: f64,
}

impl Default for CodeRetrieverConfig {
    fn default() -> Self {
        Self {
            faiss: FaissConfig { top_k: 10 },
            llm: FileRerankConfig { top_files: 5 },
        }
    }
}

impl Default for PaperRetrieverConfig {
    fn default() -> Self {
        Self {
            faiss: FaissConfig { top_k: 5 },
            min_similarity: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaperConfig {
    pub rag: bool,
    pub embedder: EmbedderConfig,
    pub text_splitter: SplitterConfig,
    pub retriever: PaperRetrieverConfig,
}

impl Default for PaperConfig {
    fn default() -> Self {
        Self {
            rag: true,
            embedder: EmbedderConfig {
                model: "text-embedding-3-small".into(),
            },
            text_splitter: SplitterConfig::default(),
            retriever: PaperRetrieverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieveConfig {
    pub embedding_model: String,
    pub technique_similarity: f64,
    pub paper_similarity: f64,
    /// Match the query against paper abstracts before matching techniques.
    pub paper_prefilter: bool,
    /// Hits kept before verifier reranking.
    pub max_hits: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self {
            embedding_model: "all-MiniLM-L6-v2".into(),
            technique_similarity: 0.6,
            paper_similarity: 0.6,
            paper_prefilter: false,
            max_hits: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub log_level: String,
    pub kg_path: PathBuf,
    pub max_prompt_code_bytes: usize,
    /// Name of the entry in `profiles` used for model routing.
    pub profile: String,
    pub concurrency: usize,
    pub max_tree_depth: usize,
    /// Route every external interface to recorded fixtures and the stub provider.
    pub fixture_mode: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures_dir: Option<PathBuf>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            log_level: "DEBUG".into(),
            kg_path: PathBuf::from("storage/kg"),
            max_prompt_code_bytes: 52_100,
            profile: "basic-deepseek-v3".into(),
            concurrency: 4,
            max_tree_depth: 4,
            fixture_mode: false,
            fixtures_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// References kept after ranking.
    pub reference_top_k: usize,
    /// Newline-delimited list of repository URLs that must never be used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blacklist: Option<PathBuf>,
    /// Number of Methodology roots used as search keywords; absent means all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub technique_keywords: Option<usize>,
    pub search_results_per_keyword: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            reference_top_k: 5,
            blacklist: None,
            technique_keywords: None,
            search_results_per_keyword: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub embed_batch: usize,
    pub arxiv_base_url: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            embed_batch: 32,
            arxiv_base_url: "https://arxiv.org".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub code: CodeConfig,
    pub paper: PaperConfig,
    pub retrieve: RetrieveConfig,
    pub global: GlobalConfig,
    pub corpus: CorpusConfig,
    pub provider: ProviderConfig,
    pub profiles: BTreeMap<String, LlmProfile>,
}

impl Default for Config {
    fn default() -> Self {
        let profile = LlmProfile::default();
        Self {
            code: CodeConfig::default(),
            paper: PaperConfig::default(),
            retrieve: RetrieveConfig::default(),
            global: GlobalConfig::default(),
            corpus: CorpusConfig::default(),
            provider: ProviderConfig::default(),
            profiles: [(profile.name.clone(), profile)].into(),
        }
    }
}

pub const FIXTURE_MODE_ENV: &str = "XKG_FIXTURE_MODE";
pub const FIXTURES_DIR_ENV: &str = "XKG_FIXTURES";

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in the file are relative to the file.
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            fix(&mut cfg.global.kg_path);
            if let Some(p) = cfg.global.fixtures_dir.as_mut() {
                fix(p);
            }
            if let Some(p) = cfg.corpus.blacklist.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the fixture-mode environment overrides.
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(FIXTURE_MODE_ENV) {
            self.global.fixture_mode = matches!(v.as_str(), "1" | "true" | "yes");
        }
        if let Ok(dir) = std::env::var(FIXTURES_DIR_ENV) {
            self.global.fixtures_dir = Some(PathBuf::from(dir));
        }
    }

    pub fn active_profile(&self) -> Result<&LlmProfile, ConfigError> {
        self.profiles.get(&self.global.profile).ok_or_else(|| ConfigError::Value {
            key: "global.profile".into(),
            message: format!("no profile named `{}`", self.global.profile),
        })
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::Value {
            key: key.into(),
            message,
        };
        for (key, s) in [
            ("code.text_splitter", self.code.text_splitter),
            ("paper.text_splitter", self.paper.text_splitter),
        ] {
            if s.chunk_size == 0 || s.chunk_overlap >= s.chunk_size {
                return Err(bad(key, format!("chunk_size ({}) must exceed chunk_overlap ({})", s.chunk_size, s.chunk_overlap)));
            }
        }
        let positive = [
            ("code.retriever.faiss.top_k", self.code.retriever.faiss.top_k),
            ("code.retriever.llm.top_files", self.code.retriever.llm.top_files),
            ("paper.retriever.faiss.top_k", self.paper.retriever.faiss.top_k),
            ("code.sandbox.max_debug_iters", self.code.sandbox.max_debug_iters as usize),
            ("code.sandbox.timeout_secs", self.code.sandbox.timeout_secs as usize),
            ("code.sandbox.slots", self.code.sandbox.slots),
            ("retrieve.max_hits", self.retrieve.max_hits),
            ("global.max_prompt_code_bytes", self.global.max_prompt_code_bytes),
            ("global.concurrency", self.global.concurrency),
            ("global.max_tree_depth", self.global.max_tree_depth),
            ("corpus.reference_top_k", self.corpus.reference_top_k),
            ("provider.embed_batch", self.provider.embed_batch),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(bad(key, "must be at least 1".into()));
            }
        }
        for (key, v) in [
            ("retrieve.technique_similarity", self.retrieve.technique_similarity),
            ("retrieve.paper_similarity", self.retrieve.paper_similarity),
            ("paper.retriever.min_similarity", self.paper.retriever.min_similarity),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(bad(key, format!("{v} is outside [-1, 1]")));
            }
        }
        if self.code.sandbox.script_name.is_empty() || self.code.sandbox.script_name.contains('/') {
            return Err(bad("code.sandbox.script_name", "must be a plain file name".into()));
        }
        if self.code.sandbox.interpreter.is_empty() {
            return Err(bad("code.sandbox.interpreter", "must name a command".into()));
        }
        for (name, p) in &self.profiles {
            p.check().map_err(|m| bad(&format!("profiles.{name}"), m))?;
        }
        self.active_profile()?;
        Ok(())
    }
}
