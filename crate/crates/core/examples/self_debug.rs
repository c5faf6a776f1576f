//! Runs a candidate with a one-line defect in the sandbox; a scripted model
//! fixes it after the first failure.
//!
//! Run with `cargo run --example self_debug` (needs `python3`).

use std::error::Error;
use std::sync::Arc;
use std::time::Duration;

use xkg::codegen::{self_debug, CodeCandidate, Sandbox, SandboxLimits};
use xkg::graph::{Category, TechniqueNode};
use xkg::llm::{Gateway, LlmProfile, StubProvider, TemplateId};

const BROKEN: &str = "def double(x: int) -> int:\n    return x * 3\n";
const TEST: &str = "# TEST BLOCK\nassert double(4) == 8, double(4)\nprint('ok')\n";
const FIXED: &str = "```python\ndef double(x: int) -> int:\n    return x * 2\n\n# TEST BLOCK\nassert double(4) == 8, double(4)\nprint('ok')\n```\n```\nDoubles an integer.\n```";

fn main() -> Result<(), Box<dyn Error>> {
    let stub = StubProvider::new().with_response(TemplateId::DebugCode, FIXED);
    let gw = Gateway::single(Arc::new(stub), LlmProfile::default());
    let limits = SandboxLimits {
        timeout: Duration::from_secs(20),
        ..SandboxLimits::default()
    };
    let sandbox = Sandbox::new(limits, 1);
    let technique = TechniqueNode::new("t", "Doubling", Category::Technique, "Multiplies by two.");
    let candidate = CodeCandidate {
        implementation: BROKEN.into(),
        test_script: TEST.into(),
        documentation: "Doubles an integer.".into(),
        history: Vec::new(),
    };
    let (fixed, passed) = self_debug(candidate, &technique, &sandbox, &gw, 3)?;
    for (i, step) in fixed.history.iter().enumerate() {
        println!(
            "run {}: exit {} in {:?}: {}\n  stderr tail: {}",
            i + 1,
            step.result.exit_status,
            step.result.wall_time,
            step.note,
            step.result.stderr.lines().last().unwrap_or("")
        );
    }
    println!("executable: {passed}\n{}", fixed.implementation);
    Ok(())
}
