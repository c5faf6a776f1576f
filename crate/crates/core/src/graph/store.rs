//! JSON persistence: one document per paper plus a manifest.
//!
//! ```text
//! <kg_path>/manifest.json      {"schema_version": 1, "papers": ["2401.00010", ...]}
//! <kg_path>/<paper_id>.json    one paper document
//! ```
//!
//! Technique and code nodes are embedded as objects keyed by id; the
//! technique→code relation is stored separately under `implementations`
//! as key-value pairs. Keys are emitted in sorted order so re-saving a
//! loaded document reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Category, CodeNode, Executability, Graph, GraphError, PaperMetadata, PaperNode, Provenance,
    TechniqueNode,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("malformed document at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    UnknownSchemaVersion { found: u64 },
    #[error("graph directory `{0}` has no manifest")]
    MissingManifest(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Document {
        path: PathBuf,
        #[source]
        source: Box<StoreError>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaperDocument {
    schema_version: u32,
    id: String,
    metadata: PaperMetadata,
    technique_roots: Vec<String>,
    techniques: BTreeMap<String, StoredTechnique>,
    code_nodes: BTreeMap<String, StoredCode>,
    implementations: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTechnique {
    name: String,
    category: Category,
    definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_definition: Option<String>,
    children: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredCode {
    implementation: String,
    test_script: String,
    documentation: String,
    executable: Executability,
    provenance: Vec<Provenance>,
    debug_iterations: u32,
}

pub fn save_paper(paper: &PaperNode) -> Vec<u8> {
    let doc = PaperDocument {
        schema_version: SCHEMA_VERSION,
        id: paper.id.clone(),
        metadata: paper.metadata.clone(),
        technique_roots: paper.technique_roots.clone(),
        techniques: paper
            .techniques
            .iter()
            .map(|(id, t)| {
                (
                    id.clone(),
                    StoredTechnique {
                        name: t.name.clone(),
                        category: t.category,
                        definition: t.definition.clone(),
                        original_definition: t.original_definition.clone(),
                        children: t.children.clone(),
                    },
                )
            })
            .collect(),
        code_nodes: paper
            .code_registry
            .iter()
            .map(|(id, c)| {
                (
                    id.clone(),
                    StoredCode {
                        implementation: c.implementation.clone(),
                        test_script: c.test_script.clone(),
                        documentation: c.documentation.clone(),
                        executable: c.executable,
                        provenance: c.provenance.clone(),
                        debug_iterations: c.debug_iterations,
                    },
                )
            })
            .collect(),
        implementations: paper
            .techniques
            .iter()
            .filter(|(_, t)| !t.code_refs.is_empty())
            .map(|(id, t)| (id.clone(), t.code_refs.clone()))
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("paper document serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_paper(bytes: &[u8]) -> Result<PaperNode, StoreError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e))?;
    check_version(&value)?;
    let doc: PaperDocument =
        serde_json::from_value(value).map_err(|e| StoreError::Malformed(e.to_string()))?;

    let mut paper = PaperNode::new(doc.id, doc.metadata);
    paper.technique_roots = doc.technique_roots;
    for (id, t) in doc.techniques {
        paper.techniques.insert(
            id.clone(),
            TechniqueNode {
                id,
                name: t.name,
                category: t.category,
                definition: t.definition,
                original_definition: t.original_definition,
                children: t.children,
                code_refs: Vec::new(),
            },
        );
    }
    for (id, c) in doc.code_nodes {
        paper.code_registry.insert(
            id.clone(),
            CodeNode {
                id,
                implementation: c.implementation,
                test_script: c.test_script,
                documentation: c.documentation,
                executable: c.executable,
                provenance: c.provenance,
                debug_iterations: c.debug_iterations,
            },
        );
    }
    for (tid, refs) in doc.implementations {
        let t = paper.techniques.get_mut(&tid).ok_or_else(|| {
            StoreError::Malformed(format!("implementation mapping names unknown technique `{tid}`"))
        })?;
        t.code_refs = refs;
    }
    Ok(paper)
}

fn check_version(value: &serde_json::Value) -> Result<(), StoreError> {
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(StoreError::UnknownSchemaVersion { found: v }),
        None => Err(StoreError::Malformed("missing schema_version".into())),
    }
}

fn parse_error(bytes: &[u8], err: &serde_json::Error) -> StoreError {
    StoreError::Parse {
        offset: byte_offset(bytes, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub papers: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            papers: Vec::new(),
        }
    }
}

/// A graph directory on disk.
#[derive(Debug, Clone)]
pub struct GraphStore {
    dir: PathBuf,
}

impl GraphStore {
    /// Opens an existing graph directory; the manifest must be present.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(StoreError::MissingManifest(dir));
        }
        Ok(Self { dir })
    }

    /// Opens a graph directory, creating it with an empty manifest if needed.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let store = Self { dir };
        if !store.manifest_path().is_file() {
            store.write_manifest(&Manifest::default())?;
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn paper_path(&self, paper_id: &str) -> PathBuf {
        let file: String = paper_id
            .chars()
            .map(|c| if c == '/' || c == '\\' || c == ':' { '_' } else { c })
            .collect();
        self.dir.join(format!("{file}.json"))
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.manifest_path();
        let bytes = read(&path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| in_file(&path, parse_error(&bytes, &e)))?;
        check_version(&value).map_err(|e| in_file(&path, e))?;
        serde_json::from_value(value)
            .map_err(|e| in_file(&path, StoreError::Malformed(e.to_string())))
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&self.manifest_path(), &bytes)
    }

    pub fn contains(&self, paper_id: &str) -> Result<bool, StoreError> {
        Ok(self.manifest()?.papers.iter().any(|p| p == paper_id))
    }

    /// Writes (or overwrites) one paper and records it in the manifest.
    pub fn put_paper(&self, paper: &PaperNode) -> Result<(), StoreError> {
        write_atomic(&self.paper_path(&paper.id), &save_paper(paper))?;
        let mut manifest = self.manifest()?;
        if !manifest.papers.contains(&paper.id) {
            manifest.papers.push(paper.id.clone());
            manifest.papers.sort();
        }
        self.write_manifest(&manifest)
    }

    pub fn get_paper(&self, paper_id: &str) -> Result<PaperNode, StoreError> {
        let path = self.paper_path(paper_id);
        let paper = load_paper(&read(&path)?).map_err(|e| in_file(&path, e))?;
        if paper.id != paper_id {
            return Err(in_file(
                &path,
                StoreError::Malformed(format!("document id `{}` does not match manifest entry", paper.id)),
            ));
        }
        Ok(paper)
    }

    pub fn load_graph(&self) -> Result<Graph, StoreError> {
        let mut graph = Graph::new();
        for id in self.manifest()?.papers {
            graph.insert_paper(self.get_paper(&id)?)?;
        }
        Ok(graph)
    }

    pub fn save_graph(&self, graph: &Graph) -> Result<(), StoreError> {
        for p in graph.papers() {
            self.put_paper(p)?;
        }
        Ok(())
    }
}

fn in_file(path: &Path, e: StoreError) -> StoreError {
    StoreError::Document {
        path: path.to_owned(),
        source: Box::new(e),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_paper_is_byte_stable() {
        let p = PaperNode::new("p", PaperMetadata::new("Only Metadata"));
        let first = save_paper(&p);
        let loaded = load_paper(&first).unwrap();
        assert_eq!(loaded, p);
        assert_eq!(save_paper(&loaded), first);
    }

    #[test]
    fn implementations_stored_as_mapping() {
        let (roots, ts, cs) = crate::graph::tests::fixture_parts();
        let mut g = Graph::new();
        g.add_paper("p", PaperMetadata::new("F"), roots, ts, cs).unwrap();
        let bytes = save_paper(g.paper("p").unwrap());
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["implementations"]["p/t/a"], serde_json::json!(["p/c/a"]));
        assert!(v["techniques"]["p/t/a"].get("code_refs").is_none());
        assert_eq!(v["code_nodes"]["p/c/a"]["executable"], serde_json::json!(true));
    }

    #[test]
    fn truncated_document_reports_offset() {
        let bytes = save_paper(&PaperNode::new("p", PaperMetadata::new("T")));
        let cut = &bytes[..bytes.len() / 2];
        match load_paper(cut) {
            Err(StoreError::Parse { offset, .. }) => assert!(offset <= cut.len() && offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_slice(&save_paper(&PaperNode::new("p", PaperMetadata::new("T")))).unwrap();
        v["schema_version"] = serde_json::json!(99);
        let err = load_paper(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, StoreError::UnknownSchemaVersion { found: 99 }));
    }

    #[test]
    fn unknown_technique_in_mapping_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_slice(&save_paper(&PaperNode::new("p", PaperMetadata::new("T")))).unwrap();
        v["implementations"] = serde_json::json!({"ghost": ["c"]});
        assert!(matches!(
            load_paper(&serde_json::to_vec(&v).unwrap()),
            Err(StoreError::Malformed(_))
        ));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = GraphStore::create(dir.path()).unwrap();
        let (roots, ts, cs) = crate::graph::tests::fixture_parts();
        let mut g = Graph::new();
        g.add_paper("hep-th/9901001", PaperMetadata::new("F"), roots, ts, cs).unwrap();
        store.save_graph(&g).unwrap();
        assert!(dir.path().join("hep-th_9901001.json").is_file());
        let again = GraphStore::open(dir.path()).unwrap().load_graph().unwrap();
        assert_eq!(again, g);
    }

    #[test]
    fn open_requires_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(GraphStore::open(dir.path()), Err(StoreError::MissingManifest(_))));
    }
}
