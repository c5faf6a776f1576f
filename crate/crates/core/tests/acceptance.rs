//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs without the libtest harness so the lines are
//! always visible.

mod common;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};
use xkg::codegen::{self_debug, CodeCandidate, Sandbox, SandboxLimits};
use xkg::config::Config;
use xkg::graph::{load_paper, prune_ungrounded, save_paper, validate, Category, CodeNode, Executability, Graph, GraphStore, PaperMetadata, TechniqueNode};
use xkg::llm::{slots, Answer, CodeWithDocs, Gateway, LlmProfile, RawTechnique, Slots, StubProvider, TemplateId, TEMPLATES};
use xkg::pipeline::GraphStats;
use xkg::query::{fetch_planning_context, retrieve_implementations, technique_text, KgIndex, RetrieveSettings};
use xkg::rag::{split_text, Chunk, VectorIndex};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn runner(cases: u32) -> TestRunner {
    let config = RunnerConfig {
        cases,
        failure_persistence: None,
        ..RunnerConfig::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Counts the fixture was designed to produce. The target contributes one
/// Methodology, one Technique and one Finding, stored unpruned and without
/// code. The widget paper keeps its Methodology, three grounded Techniques
/// and a Resource. The gizmo paper keeps Momentum and a Finding; Warmup has
/// no snippets and Clipping never passes, so both are pruned.
fn fixture_build() -> Outcome {
    let start = Instant::now();
    let first = common::build_fixture();
    let elapsed = start.elapsed();
    let stats = GraphStats::of(&GraphStore::open(first.kg()).map_err(|e| e.to_string())?.load_graph().map_err(|e| e.to_string())?);

    let expected = GraphStats {
        papers: 3,
        techniques: 9,
        techniques_by_category: BTreeMap::from([(Category::Methodology, 2), (Category::Technique, 4), (Category::Finding, 2), (Category::Resource, 1)]),
        code_nodes: 4,
        executable_code_nodes: 4,
        structural_edges: 3,
        implementation_edges: 4,
        source_tokens: 234,
    };
    check(stats == expected, || format!("stats differ: got {stats:?}"))?;
    let r = &first.report;
    check((r.candidates, r.papers_curated, r.papers_built, r.techniques_pruned) == (4, 2, 2, 2), || format!("report differs: {r:?}"))?;
    check(r.failures.is_empty(), || format!("unexpected failures: {:?}", r.failures))?;
    check(elapsed < Duration::from_secs(60), || format!("build took {elapsed:?}"))?;

    // A second build in a fresh directory must write identical bytes.
    let second = common::build_fixture();
    let files = |dir: &std::path::Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
            .collect()
    };
    let (a, b) = (files(first.kg()), files(second.kg()));
    check(a == b, || "two builds wrote different graph files".into())?;
    Ok(format!("{} papers, {} techniques, {} executable code nodes in {:.2?}; rebuild byte-identical over {} files", stats.papers, stats.techniques, stats.executable_code_nodes, elapsed, a.len()))
}

fn pruning_oracle() -> Outcome {
    let mismatches = Cell::new(0usize);
    let nodes = Cell::new(0usize);
    let result = runner(100).run(&common::arb_shapes(50), |shapes| {
        let paper = common::paper_from_shapes("p", &shapes);
        let grounded = common::brute_force_grounded(&paper);
        let expected: BTreeSet<String> = paper
            .techniques
            .values()
            .filter(|t| !t.category.is_implementable() || grounded.contains(&t.id))
            .map(|t| t.id.clone())
            .collect();
        // Each survivor should end up under its nearest surviving ancestor.
        let parent: BTreeMap<&str, &str> = paper.techniques.values().flat_map(|t| t.children.iter().map(move |c| (c.as_str(), t.id.as_str()))).collect();
        let expected_parent = |id: &str| -> Option<String> {
            let mut cur = parent.get(id).copied();
            while let Some(p) = cur {
                if expected.contains(p) {
                    return Some(p.to_owned());
                }
                cur = parent.get(p).copied();
            }
            None
        };

        let mut graph = Graph::new();
        graph.insert_paper(paper.clone()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prune_ungrounded(&mut graph, "p").map_err(|e| TestCaseError::fail(e.to_string()))?;
        let pruned = graph.paper("p").unwrap();
        let survivors: BTreeSet<String> = pruned.techniques.keys().cloned().collect();
        let new_parent: BTreeMap<&str, &str> = pruned.techniques.values().flat_map(|t| t.children.iter().map(move |c| (c.as_str(), t.id.as_str()))).collect();
        let parents_ok = survivors.iter().all(|id| new_parent.get(id.as_str()).map(|p| p.to_string()) == expected_parent(id));
        nodes.set(nodes.get() + shapes.len());
        if survivors != expected || !parents_ok || !validate(&graph).is_empty() {
            mismatches.set(mismatches.get() + 1);
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    check(mismatches.get() == 0, || format!("{} of 100 forests mismatched", mismatches.get()))?;
    Ok(format!("100 forests ({} nodes), 0 mismatches against brute-force reachability", nodes.get()))
}

/// Textbook cosine; zero for a zero vector.
fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn retrieval_oracle() -> Outcome {
    let cfg = Config::default();
    check(cfg.code.retriever.faiss.top_k == 10 && cfg.paper.retriever.faiss.top_k == 5, || "top_k defaults are not 10 (code) and 5 (paper)".into())?;
    // Small integer components make exact ties common.
    let instance = (1usize..=64, 1usize..=200).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec((prop::collection::vec(-2i8..=2, dim), prop::option::of(prop::sample::select(vec!["a.py", "b.py"])), 0usize..4), n),
            prop::collection::vec(-2i8..=2, dim),
            1usize..=n + 5,
        )
    });
    let mismatches = Cell::new(0usize);
    let ties = Cell::new(0usize);
    runner(200)
        .run(&instance, |(rows, query, k)| {
            let to_f32 = |v: &[i8]| v.iter().map(|x| f32::from(*x)).collect::<Vec<f32>>();
            let items: Vec<(Chunk, Vec<f32>)> = rows
                .iter()
                .enumerate()
                .map(|(i, (v, path, start))| {
                    let chunk = Chunk { doc_id: i.to_string(), file_path: path.map(str::to_owned), span: (*start, start + 1), text: String::new() };
                    (chunk, to_f32(v))
                })
                .collect();
            let q = to_f32(&query);
            let mut full: Vec<(f64, Option<String>, usize, usize)> = items.iter().enumerate().map(|(i, (c, v))| (oracle_cosine(v, &q), c.file_path.clone(), c.span.0, i)).collect();
            full.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
            ties.set(ties.get() + full.windows(2).filter(|w| w[0].0 == w[1].0).count());
            let expected: Vec<(String, f64)> = full.iter().take(k).map(|(s, _, _, i)| (i.to_string(), *s)).collect();

            let index = VectorIndex::from_vectors("m", items).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let got: Vec<(String, f64)> = index.search(&q, k).map_err(|e| TestCaseError::fail(e.to_string()))?.into_iter().map(|h| (h.chunk.doc_id.clone(), h.similarity)).collect();
            let same = got.len() == expected.len() && got.iter().zip(&expected).all(|(g, e)| g.0 == e.0 && (g.1 - e.1).abs() < 1e-12);
            if !same {
                mismatches.set(mismatches.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    check(mismatches.get() == 0, || format!("{} of 200 instances mismatched", mismatches.get()))?;
    Ok(format!("200 instances, {} tied neighbours, 0 mismatches; top_k defaults 10/5", ties.get()))
}

fn chunker_contract() -> Outcome {
    let spans: Vec<_> = split_text(&"x".repeat(600), 350, 100).map_err(|e| e.to_string())?.iter().map(|c| c.span).collect();
    check(spans == [(0, 350), (250, 600)], || format!("600/350/100 gave {spans:?}"))?;
    let triple = (1usize..=400).prop_flat_map(|size| ("\\PC{0,1500}", Just(size), 0..size));
    let violations = Cell::new(0usize);
    runner(1000)
        .run(&triple, |(text, size, overlap)| {
            let chars: Vec<char> = text.chars().collect();
            let chunks = split_text(&text, size, overlap).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let mut ok = if chars.is_empty() { chunks.is_empty() } else { chunks.first().map(|c| c.start()) == Some(0) && chunks.last().map(|c| c.end()) == Some(chars.len()) };
            for (i, c) in chunks.iter().enumerate() {
                let last = i + 1 == chunks.len();
                ok &= c.text == chars[c.start()..c.end()].iter().collect::<String>();
                ok &= if last { c.end() - c.start() <= size } else { c.end() - c.start() == size };
                if let Some(next) = chunks.get(i + 1) {
                    ok &= c.end() - next.start() == overlap;
                }
            }
            if !ok {
                violations.set(violations.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    check(violations.get() == 0, || format!("{} of 1000 triples violated coverage or overlap", violations.get()))?;
    Ok("1000 triples cover their text with exact overlaps; 600/350/100 gives [0,350) [250,600)".into())
}

/// A graph of three grounded techniques, all embedded at `[1, 0]`, and a
/// gateway that embeds `q{c}` at cosine `c` from them.
fn gating_fixture(cosines: &[f64]) -> (Graph, Gateway) {
    let mut stub = StubProvider::new().with_dimension(2);
    let mut techniques = Vec::new();
    let mut code = Vec::new();
    for name in ["Alpha Loss", "Beta Encoder", "Gamma Schedule"] {
        let id = format!("p/t/{}", name.to_lowercase().replace(' ', "-"));
        let cid = id.replace("/t/", "/c/");
        let mut t = TechniqueNode::new(&id, name, Category::Technique, format!("{name} definition"));
        t.code_refs.push(cid.clone());
        stub = stub.with_embedding(name, vec![1.0, 0.0]).with_embedding(technique_text(name, &t.definition), vec![1.0, 0.0]);
        techniques.push(t);
        code.push(CodeNode {
            id: cid,
            implementation: "x = 1\n".into(),
            test_script: "# TEST BLOCK\nassert x == 1\n".into(),
            documentation: String::new(),
            executable: Executability::Passed,
            provenance: Vec::new(),
            debug_iterations: 1,
        });
    }
    for &c in cosines {
        stub = stub.with_embedding(format!("q{c}"), vec![c as f32, (1.0 - c * c).sqrt() as f32]);
    }
    let roots = techniques.iter().map(|t| t.id.clone()).collect();
    let mut graph = Graph::new();
    graph.add_paper("p", PaperMetadata::new("Gating"), roots, techniques, code).unwrap();
    (graph, Gateway::single(Arc::new(stub), LlmProfile::default()))
}

fn threshold_gating() -> Outcome {
    let sweep: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
    let mut queries = vec![0.59, 0.61];
    queries.extend(&sweep);
    let (graph, gw) = gating_fixture(&queries);
    let index = KgIndex::build(&graph, &gw, "m").map_err(|e| e.to_string())?;
    let settings = RetrieveSettings::from(&Config::default().retrieve);
    check(settings.technique_similarity == 0.6, || "technique_similarity default is not 0.6".into())?;
    let run = |q: f64, threshold: f64| -> Result<BTreeSet<String>, String> {
        let s = RetrieveSettings { technique_similarity: threshold, ..settings };
        Ok(retrieve_implementations(&graph, &index, &format!("q{q}"), s, &gw).map_err(|e| e.to_string())?.into_iter().map(|h| h.technique_id).collect())
    };
    let below = run(0.59, 0.6)?;
    let above = run(0.61, 0.6)?;
    check(below.is_empty(), || format!("0.59 returned {below:?}"))?;
    check(above.len() == 3, || format!("0.61 returned {above:?}"))?;
    let mut checked = 0;
    for &q in &sweep {
        let mut previous: Option<BTreeSet<String>> = None;
        for &t in &sweep {
            let hits = run(q, t)?;
            if let Some(prev) = &previous {
                check(hits.is_subset(prev), || format!("query {q}: raising the threshold to {t} added hits"))?;
            }
            if (q - t).abs() > 1e-3 {
                check((hits.len() == 3) == (q > t), || format!("query {q} at threshold {t} returned {} hits", hits.len()))?;
            }
            previous = Some(hits);
            checked += 1;
        }
    }
    Ok(format!("0.59 -> [], 0.61 -> 3 hits; {checked} sweep points monotone"))
}

fn stub_debugger(fix: Option<&'static str>) -> Gateway {
    let stub = StubProvider::new().with_handler(TemplateId::DebugCode, move |req| {
        let code = req.slots.get("code").cloned().unwrap_or_default();
        let body = match fix {
            Some(f) => code.replace("x * 3", f),
            None => code,
        };
        Ok(format!("```python\n{body}```\n```\nDoubles.\n```"))
    });
    Gateway::single(Arc::new(stub), LlmProfile::default())
}

fn self_debug_replay() -> Outcome {
    let built = common::build_fixture();
    let graph = GraphStore::open(built.kg()).and_then(|s| s.load_graph()).map_err(|e| e.to_string())?;
    let fresh = Sandbox::new(SandboxLimits::from(&built.cfg.code.sandbox), 1);
    let mut replayed = 0;
    for p in graph.papers() {
        for c in p.code_registry.values().filter(|c| c.executable.is_executable()) {
            let r = fresh.run(&c.program()).map_err(|e| e.to_string())?;
            check(r.success(), || format!("{} failed on replay: {}", c.id, r.stderr))?;
            replayed += 1;
        }
    }
    let seeded = graph.resolve("2401.00002/c/contrastive-widget-loss");
    let iterations = match seeded {
        Some(xkg::graph::NodeRef::Code(_, c)) => c.debug_iterations,
        _ => return Err("seeded fixture node is missing".into()),
    };
    check(iterations == 2, || format!("seeded fixture defect took {iterations} runs"))?;

    let max_iters = Config::default().code.sandbox.max_debug_iters;
    check(max_iters == 3, || format!("max_debug_iters default is {max_iters}"))?;
    let technique = TechniqueNode::new("t", "Doubling", Category::Technique, "Multiplies by two.");
    let candidate = CodeCandidate {
        implementation: "def double(x):\n    return x * 3\n".into(),
        test_script: "# TEST BLOCK\nassert double(4) == 8\n".into(),
        documentation: "Doubles.".into(),
        history: Vec::new(),
    };
    let (repaired, ok) = self_debug(candidate.clone(), &technique, &fresh, &stub_debugger(Some("x * 2")), max_iters).map_err(|e| e.to_string())?;
    check(ok && repaired.history.len() == 2, || format!("one-line defect: passed={ok} after {} runs", repaired.history.len()))?;
    let (stuck, ok) = self_debug(candidate, &technique, &fresh, &stub_debugger(None), max_iters).map_err(|e| e.to_string())?;
    check(!ok && stuck.history.len() == 3, || format!("never-passing: passed={ok} after {} runs", stuck.history.len()))?;

    let limits = SandboxLimits::default();
    check(limits.timeout == Duration::from_secs(60), || format!("default timeout is {:?}", limits.timeout))?;
    let r = Sandbox::new(limits, 1).run("import time\ntime.sleep(300)\n").map_err(|e| e.to_string())?;
    let secs = r.wall_time.as_secs_f64();
    check(r.timed_out && !r.success() && (58.0..=62.0).contains(&secs), || format!("timeout run: timed_out={} after {secs:.2}s", r.timed_out))?;
    Ok(format!("{replayed} executable nodes replay; seeded defect fixed in 2 runs; never-passing stops at 3; 60 s timeout fired at {secs:.2}s"))
}

fn persistence() -> Outcome {
    let failures = Cell::new(0usize);
    runner(500)
        .run(&common::arb_paper(), |paper| {
            let bytes = save_paper(&paper);
            let ok = match load_paper(&bytes) {
                Ok(back) => back == paper && save_paper(&back) == bytes,
                Err(_) => false,
            };
            if !ok {
                failures.set(failures.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    check(failures.get() == 0, || format!("{} of 500 papers did not round-trip", failures.get()))?;
    Ok("500 random papers round-trip with equality; re-save byte-stable".into())
}

fn planning_redaction() -> Outcome {
    let built = common::build_fixture();
    let graph = GraphStore::open(built.kg()).and_then(|s| s.load_graph()).map_err(|e| e.to_string())?;
    let views: Vec<String> = graph.papers().map(|p| fetch_planning_context(&graph, &p.id).map(|v| v.to_json())).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut needles = BTreeSet::new();
    for p in graph.papers() {
        for c in p.code_registry.values() {
            for body in [&c.implementation, &c.test_script] {
                needles.insert(body.trim().to_owned());
                let escaped = serde_json::to_string(body.trim()).unwrap();
                needles.insert(escaped.trim_matches('"').to_owned());
                needles.extend(body.lines().map(str::trim).filter(|l| l.len() >= 8).map(str::to_owned));
            }
        }
    }
    needles.retain(|n| !n.is_empty());
    check(!needles.is_empty(), || "fixture graph has no code bodies".into())?;
    for v in &views {
        for key in ["\"implementation\"", "\"test_script\""] {
            check(!v.contains(key), || format!("view contains key {key}"))?;
        }
        for n in &needles {
            check(!v.contains(n.as_str()), || format!("view leaks `{n}`"))?;
        }
    }
    let bytes: usize = views.iter().map(String::len).sum();
    Ok(format!("{} views ({bytes} bytes) scanned for {} body fragments, 0 found", views.len(), needles.len()))
}

fn all_slots(id: TemplateId) -> Slots {
    let mut s = slots([]);
    for name in id.template().slots {
        s.insert((*name).to_owned(), format!("value of {name}"));
    }
    s
}

fn round_trip(id: TemplateId, response: &str) -> Result<Answer, String> {
    let gw = Gateway::single(Arc::new(StubProvider::new().with_response(id, response)), LlmProfile::default());
    gw.chat(id, &all_slots(id)).map_err(|e| format!("{id}: {e}"))
}

fn prompt_contracts() -> Outcome {
    use TemplateId::*;
    let core: BTreeSet<TemplateId> = TEMPLATES.iter().filter(|t| t.core_contract).map(|t| t.id).collect();
    let expected: BTreeSet<TemplateId> = [ExtractReferences, ExtractTechniques, RepoOverview, AssociatedPaper, RewriteDescription, RelevantCode, RerankTechniques, LeafCode, CompositeCode, VerifyCode, DecomposeTask].into();
    check(core == expected, || format!("core contracts are {core:?}"))?;

    let code = CodeWithDocs { implementation: "def f():\n    return 1\n".into(), test_script: "# TEST BLOCK\nassert f() == 1\n".into(), documentation: "Returns one.".into() };
    let code_reply = "```python\ndef f():\n    return 1\n# TEST BLOCK\nassert f() == 1\n```\n```\nReturns one.\n```";
    let strings = || Answer::Strings(vec!["A".into(), "B".into()]);
    let pairs = || Answer::Pairs(vec![("A".into(), "x".into()), ("B".into(), "y".into())]);
    let technique = RawTechnique { name: "A".into(), kind: "Technique".into(), description: "d".into(), components: Vec::new() };
    let cases: Vec<(TemplateId, &str, Answer, &str, Answer)> = vec![
        (ExtractReferences, "```\n[\"A\", \"B\"]\n```", strings(), "```\nNone\n```", Answer::Strings(vec![])),
        (ExtractTechniques, "```\n[{\"name\": \"A\", \"type\": \"Technique\", \"description\": \"d\"}]\n```", Answer::Techniques(vec![technique]), "```\nNone\n```", Answer::Techniques(vec![])),
        (RepoOverview, "```\nA toy repo.\n```", Answer::Text(Some("A toy repo.".into())), "```\nNone\n```", Answer::Text(None)),
        (AssociatedPaper, "```\nWidget Paper\n```", Answer::Text(Some("Widget Paper".into())), "```\nNone\n```", Answer::Text(None)),
        (RewriteDescription, "```\nBetter text.\n```", Answer::Text(Some("Better text.".into())), "```\nNone\n```", Answer::Text(None)),
        (RelevantCode, "```\n[\"A\", \"B\"]\n```", strings(), "```\nNone\n```", Answer::Strings(vec![])),
        (RerankTechniques, "```\n[(\"A\", \"x\"), (\"B\", \"y\")]\n```", pairs(), "```\nNone\n```", Answer::Pairs(vec![])),
        (LeafCode, code_reply, Answer::Code(Some(code.clone())), "```\nNone\n```", Answer::Code(None)),
        (CompositeCode, code_reply, Answer::Code(Some(code)), "```\nNone\n```", Answer::Code(None)),
        (VerifyCode, "```\nTrue\n```", Answer::Bool(true), "```\nFalse\n```", Answer::Bool(false)),
        (DecomposeTask, "```\n[(\"A\", \"x\"), (\"B\", \"y\")]\n```", pairs(), "```\nNone\n```", Answer::Pairs(vec![])),
    ];
    for (id, reply, want, empty_reply, want_empty) in &cases {
        let got = round_trip(*id, reply)?;
        check(&got == want, || format!("{id}: got {got:?}"))?;
        let got = round_trip(*id, empty_reply)?;
        check(&got == want_empty, || format!("{id} empty case: got {got:?}"))?;
    }
    Ok(format!("{} contracts registered, each round-trips a full and an empty answer", cases.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("end-to-end fixture build", fixture_build),
        ("pruning oracle", pruning_oracle),
        ("retrieval oracle", retrieval_oracle),
        ("chunker contract", chunker_contract),
        ("threshold gating", threshold_gating),
        ("self-debug replay", self_debug_replay),
        ("persistence", persistence),
        ("planning-view redaction", planning_redaction),
        ("prompt-contract coverage", prompt_contracts),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}) [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
