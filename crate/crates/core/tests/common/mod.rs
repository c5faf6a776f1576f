//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use tempfile::TempDir;
use xkg::config::Config;
use xkg::graph::{Category, CodeNode, Executability, PaperMetadata, PaperNode, Provenance, TechniqueNode};
use xkg::pipeline::{cmd_build, BuildReport, Services, TargetSpec};

pub const TARGET: &str = "2501.00001";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

/// The mini fixture config with its graph directory moved into `kg`.
pub fn fixture_config(kg: &Path) -> Config {
    let mut cfg = Config::load(&fixture_dir().join("config.toml")).expect("fixture config loads");
    cfg.global.kg_path = kg.to_owned();
    cfg
}

pub struct Built {
    pub dir: TempDir,
    pub cfg: Config,
    pub services: Services,
    pub report: BuildReport,
}

impl Built {
    pub fn kg(&self) -> &Path {
        self.dir.path()
    }
}

/// Builds the mini fixture graph into a fresh temporary directory.
pub fn build_fixture() -> Built {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = fixture_config(dir.path());
    let services = Services::from_config(&cfg).expect("fixture services");
    let report = cmd_build(&cfg, &TargetSpec::parse(TARGET), &services).expect("fixture build");
    Built { dir, cfg, services, report }
}

/// Shape of one random technique: category, parent pick, grounded flag.
pub type NodeShape = (Category, usize, bool);

pub fn arb_category() -> impl Strategy<Value = Category> {
    prop::sample::select(Category::ALL.to_vec())
}

pub fn arb_shapes(max: usize) -> impl Strategy<Value = Vec<NodeShape>> {
    prop::collection::vec((arb_category(), any::<usize>(), any::<bool>()), 0..=max)
}

fn code_node(id: String, body: &str, executable: Executability, provenance: Vec<Provenance>, debug_iterations: u32) -> CodeNode {
    CodeNode {
        id,
        implementation: format!("{body}\n"),
        test_script: format!("# TEST BLOCK\nassert True  # {body}\n"),
        documentation: format!("Docs for {body}."),
        executable,
        provenance,
        debug_iterations,
    }
}

/// Turns shapes into a valid paper. Node `i` hangs under a uniformly picked
/// earlier implementable node, or becomes a root when the pick lands past
/// them. Only implementable nodes may carry code.
pub fn paper_from_shapes(id: &str, shapes: &[NodeShape]) -> PaperNode {
    let mut paper = PaperNode::new(id, PaperMetadata::new(format!("Paper {id}")));
    let mut parents: Vec<String> = Vec::new();
    for (i, &(category, pick, grounded)) in shapes.iter().enumerate() {
        let tid = format!("{id}/t/n{i}");
        let mut t = TechniqueNode::new(&tid, format!("Node {i}"), category, format!("definition {i}"));
        if grounded && category.is_implementable() {
            let cid = format!("{id}/c/n{i}");
            paper.code_registry.insert(cid.clone(), code_node(cid.clone(), &format!("n{i} = {i}"), Executability::Passed, Vec::new(), 1));
            t.code_refs.push(cid);
        }
        match pick % (parents.len() + 1) {
            k if k < parents.len() => paper.techniques.get_mut(&parents[k]).unwrap().children.push(tid.clone()),
            _ => paper.technique_roots.push(tid.clone()),
        }
        if category.may_have_children() {
            parents.push(tid.clone());
        }
        paper.techniques.insert(tid, t);
    }
    paper
}

fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ,.:()\\-]{0,24}",
        "\\PC{0,16}",
        Just("quote \" backslash \\ newline\n tab\t".to_owned()),
    ]
}

fn arb_executability() -> impl Strategy<Value = Executability> {
    prop_oneof![Just(Executability::Passed), Just(Executability::Failed), Just(Executability::Unchecked)]
}

/// Arbitrary valid papers with varied text, metadata and code attributes.
pub fn arb_paper() -> impl Strategy<Value = PaperNode> {
    let meta = (
        "[A-Za-z][A-Za-z0-9 ]{0,30}",
        arb_text(),
        prop::collection::btree_set("[A-Za-z ]{1,20}", 0..4),
        prop::option::of("https://github\\.com/[a-z]{1,8}/[a-z]{1,8}"),
        any::<u64>(),
    );
    let code = prop::collection::vec((arb_text(), arb_executability(), prop::collection::vec(("[a-z/.]{1,12}", "[a-z_]{1,8}\\.py"), 0..3), 0u32..4), 50);
    ("[a-z0-9]{1,10}", arb_shapes(30), meta, code, prop::collection::vec(arb_text(), 50)).prop_map(
        |(id, shapes, (title, abstract_text, references, repo_url, source_tokens), code, definitions)| {
            let mut paper = paper_from_shapes(&id, &shapes);
            paper.metadata = PaperMetadata {
                title,
                abstract_text,
                references: references.into_iter().collect(),
                repo_url,
                source_tokens,
            };
            for (i, t) in paper.techniques.values_mut().enumerate() {
                t.definition = definitions[i % definitions.len()].clone();
                if i % 3 == 0 {
                    t.original_definition = Some(format!("first draft {i}"));
                }
            }
            for (i, c) in paper.code_registry.values_mut().enumerate() {
                let (body, executable, provenance, iterations) = &code[i % code.len()];
                *c = code_node(
                    c.id.clone(),
                    body,
                    *executable,
                    provenance.iter().map(|(r, f)| Provenance { repo_url: r.clone(), file_path: f.clone() }).collect(),
                    *iterations,
                );
            }
            paper
        },
    )
}

/// Technique ids that have a code reference on themselves or on any node
/// reachable through `children`, found by exhaustive search from every node.
pub fn brute_force_grounded(paper: &PaperNode) -> BTreeSet<String> {
    paper
        .techniques
        .keys()
        .filter(|start| {
            let mut seen = BTreeSet::new();
            let mut frontier = vec![(*start).clone()];
            while let Some(id) = frontier.pop() {
                if !seen.insert(id.clone()) {
                    continue;
                }
                let t = &paper.techniques[&id];
                if !t.code_refs.is_empty() {
                    return true;
                }
                frontier.extend(t.children.iter().cloned());
            }
            false
        })
        .cloned()
        .collect()
}
