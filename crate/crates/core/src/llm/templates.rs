//! Prompt templates. Every model call in the crate goes through this registry.
//!
//! Placeholders are written `{slot}`; rendering fails before any provider
//! call if a declared slot is unbound. Substituted values are never
//! re-scanned, so slot values may contain braces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::answer::AnswerContract;
use super::ModelRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ExtractReferences,
    ExtractTechniques,
    RepoOverview,
    AssociatedPaper,
    RewriteDescription,
    RelevantCode,
    RerankTechniques,
    LeafCode,
    CompositeCode,
    VerifyCode,
    DecomposeTask,
    RankReferences,
    DebugCode,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::ExtractReferences,
        TemplateId::ExtractTechniques,
        TemplateId::RepoOverview,
        TemplateId::AssociatedPaper,
        TemplateId::RewriteDescription,
        TemplateId::RelevantCode,
        TemplateId::RerankTechniques,
        TemplateId::LeafCode,
        TemplateId::CompositeCode,
        TemplateId::VerifyCode,
        TemplateId::DecomposeTask,
        TemplateId::RankReferences,
        TemplateId::DebugCode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ExtractReferences => "extract_references",
            TemplateId::ExtractTechniques => "extract_techniques",
            TemplateId::RepoOverview => "repo_overview",
            TemplateId::AssociatedPaper => "associated_paper",
            TemplateId::RewriteDescription => "rewrite_description",
            TemplateId::RelevantCode => "relevant_code",
            TemplateId::RerankTechniques => "rerank_techniques",
            TemplateId::LeafCode => "leaf_code",
            TemplateId::CompositeCode => "composite_code",
            TemplateId::VerifyCode => "verify_code",
            TemplateId::DecomposeTask => "decompose_task",
            TemplateId::RankReferences => "rank_references",
            TemplateId::DebugCode => "debug_code",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn template(self) -> &'static Template {
        TEMPLATES
            .iter()
            .find(|t| t.id == self)
            .expect("every template id is registered")
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub struct Template {
    pub id: TemplateId,
    pub role: ModelRole,
    pub slots: &'static [&'static str],
    pub contract: AnswerContract,
    /// True for the eleven construction/retrieval prompt contracts; false for
    /// the two this crate adds (reference ranking, debugging).
    pub core_contract: bool,
    pub body: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("template `{template}` has unbound slot `{slot}`")]
    UnboundSlot { template: TemplateId, slot: String },
}

pub type Slots = BTreeMap<String, String>;

/// Convenience builder for slot maps.
pub fn slots<const N: usize>(pairs: [(&str, String); N]) -> Slots {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

impl Template {
    pub fn render(&self, values: &Slots) -> Result<String, RenderError> {
        for s in self.slots {
            if !values.contains_key(*s) {
                return Err(RenderError::UnboundSlot {
                    template: self.id,
                    slot: (*s).to_owned(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len() + values.values().map(String::len).sum::<usize>());
        let mut rest = self.body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let name_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            let name = &after[..name_len];
            if after[name_len..].starts_with('}') && self.slots.contains(&name) {
                out.push_str(&values[name]);
                rest = &after[name_len + 1..];
            } else {
                out.push('{');
                rest = after;
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

const ANSWER_FOOTER: &str = "Think the task through, then put your final answer between two ``` markers at the very end of your reply.";

pub static TEMPLATES: &[Template] = &[
    Template {
        id: TemplateId::ExtractReferences,
        role: ModelRole::Paper,
        slots: &["bbl"],
        contract: AnswerContract::StringList,
        core_contract: true,
        body: "# Task\n\
Below is the content of a LaTeX .bbl bibliography file:\n{bbl}\n\
List the title of every reference it contains.\n\n\
# Output\n\
1. Give the titles as a list of strings, in the order they appear.\n\
2. If the file holds no references, answer None.\n\n\
Put your final answer between two ``` markers at the very end of your reply.",
    },
    Template {
        id: TemplateId::ExtractTechniques,
        role: ModelRole::Paper,
        slots: &["title", "sections", "equations"],
        contract: AnswerContract::TechniqueList,
        core_contract: true,
        body: "# Task\n\
You are reading the research paper \"{title}\".\n\
Main sections:\n{sections}\n\
Key equations, to pin down the exact algorithms:\n{equations}\n\n\
Identify the paper's core components and give each one a precise definition that an engineer could implement.\n\n\
# Instructions\n\
1. Components include new methods, reusable techniques, key findings and released datasets or benchmarks.\n\
2. Assign exactly one type to each component:\n\
   - Methodology: a complete end-to-end procedure or architecture introduced by the paper, implementable as a standalone system.\n\
   - Technique: a self-contained, algorithmically implementable unit used inside a methodology or the experiments, new or borrowed from prior work, implementable without integrating other modules.\n\
   - Finding: an empirical or theoretical insight, proof or research direction. Experimental tricks and theory not tied to code belong here.\n\
   - Resource: a publicly released dataset or benchmark built in this paper.\n\
3. Definitions must come from the paper only, describe inputs, core logic and outputs, and keep as much original detail as possible.\n\
4. When a Methodology or Technique is built from smaller Techniques, nest them under its `components` field instead of listing them separately. Finding and Resource entries never have components, and components are always Techniques.\n\n\
# Output format\n\
A list of dictionaries with keys:\n\
- name: a concise, standard academic term for the component\n\
- type: one of Methodology, Technique, Finding, Resource\n\
- description: a detailed, self-contained explanation\n\
- components: optional list of nested component dictionaries with the same keys\n\n",
    },
    Template {
        id: TemplateId::RepoOverview,
        role: ModelRole::Paper,
        slots: &["name", "file_tree", "readme"],
        contract: AnswerContract::OptionalText,
        core_contract: true,
        body: "# Task\n\
Write a structured overview of the repository {name}.\n\n\
# Input\n\
File tree:\n{file_tree}\n\n\
README:\n{readme}\n\n\
# Output\n\
A markdown overview with three parts: general overview, system architecture, and core features.\n\n\
Put your final answer between two ``` markers at the very end of your reply.",
    },
    Template {
        id: TemplateId::AssociatedPaper,
        role: ModelRole::Paper,
        slots: &["name", "readme"],
        contract: AnswerContract::OptionalText,
        core_contract: true,
        body: "# Task\n\
Decide whether the repository {name} is the official or direct implementation of one specific academic paper.\n\n\
# Input\n\
README:\n{readme}\n\n\
# Output\n\
1. If the README clearly shows the repository implements a specific paper, answer with that paper's full title.\n\
2. Otherwise (generic description, several papers, no paper at all) answer None.\n\n\
Put your final answer between two ``` markers at the very end of your reply.",
    },
    Template {
        id: TemplateId::RewriteDescription,
        role: ModelRole::Paper,
        slots: &["paper", "technique", "excerpt"],
        contract: AnswerContract::OptionalText,
        core_contract: true,
        body: "# Task\n\
Improve the description of a technique taken from the paper \"{paper}\".\n\n\
# Input\n\
1. Technique:\n{technique}\n\n\
2. Excerpts from the paper about this technique:\n{excerpt}\n\n\
# Output\n\
One continuous academic paragraph, no lists.\n\
1. Keep exactly the scope of the original technique; ignore neighbouring techniques.\n\
2. Add implementation detail (formulas, parameters, steps) only when it appears in the excerpts.\n\
3. If the excerpts add nothing, return the description unchanged. Never add outside information.\n\
4. The result must be precise enough to map onto one concrete implementation.\n\n",
    },
    Template {
        id: TemplateId::RelevantCode,
        role: ModelRole::Code,
        slots: &["paper", "technique", "overview", "file_snippets"],
        contract: AnswerContract::StringList,
        core_contract: true,
        body: "# Task\n\
Some files were retrieved from a code repository. Decide which of them directly implement a technique from the paper \"{paper}\".\n\n\
# Input\n\
1. Technique:\n{technique}\n\n\
2. Repository overview:\n{overview}\n\n\
3. Retrieved files:\n{file_snippets}\n\n\
# Output\n\
A list of file names like [\"a.py\", \"b.py\"], most relevant first.\n\
1. Leave out files that are not the concrete implementation or configuration of this technique (tests, docs, other techniques).\n\
2. If none of the files implements it, answer None.\n\
3. Use a list even for a single file.\n\n",
    },
    Template {
        id: TemplateId::RerankTechniques,
        role: ModelRole::Verifier,
        slots: &["technique", "relevant_techniques"],
        contract: AnswerContract::PairList,
        core_contract: true,
        body: "# Task\n\
Implementations of several techniques were retrieved from a knowledge base. Decide which ones help implement the target technique.\n\n\
# Input\n\
1. Target technique:\n{technique}\n\n\
2. Retrieved technique implementations:\n{relevant_techniques}\n\n\
# Output\n\
A list of (technique_name, apply_guidance) pairs like [(\"\", \"\"), (\"\", \"\")], most relevant first. The guidance briefly says how the technique applies here and what must change to adapt it; write it plainly without parentheses.\n\
1. Drop techniques that do not bear on the concrete implementation.\n\
2. Copy each technique name exactly as given.\n\
3. When several techniques share the same core definition, keep only the most applicable one.\n\
4. If nothing is relevant, answer None.\n\
5. Use a list even for a single technique.\n\n",
    },
    Template {
        id: TemplateId::LeafCode,
        role: ModelRole::Code,
        slots: &["paper", "abstract", "technique", "file_snippets"],
        contract: AnswerContract::CodeWithDocs,
        core_contract: true,
        body: "# Task\n\
The code files below are the official implementation of a technique from the paper \"{paper}\". Turn them into one clean, documented, self-contained and executable code block.\n\n\
# Input\n\
1. Abstract:\n{abstract}\n\n\
2. Technique:\n{technique}\n\n\
3. Code files:\n{file_snippets}\n\n\
# Workflow\n\
1. Work out the technique's inputs, outputs and steps. Consider only this technique.\n\
2. Extract only the code that belongs to this technique; everything else must be left out.\n\
3. Refactor: remove hard-coded values, isolate the core algorithm, add docstrings and type hints.\n\
4. Finish with a runnable example that doubles as a test.\n\
5. Write 5-10 sentences of documentation on the logic, options and usage.\n\n\
# Requirements\n\
- All imports at the top of the block.\n\
- Keep the original algorithmic steps, parameters and comments; only minimal renaming or signature changes are allowed.\n\
- Every function and method has a docstring and type hints.\n\
- The file ends with a main block that starts with the comment `# TEST BLOCK` and uses parameters from the paper or repository (state any defaults you choose).\n\n\
# Output\n\
Return the code block and then the documentation, each between its own pair of ``` markers, at the end of your reply.\n\
If the technique cannot stand alone without other modules, or the files contain no direct implementation of it, answer None instead.",
    },
    Template {
        id: TemplateId::CompositeCode,
        role: ModelRole::Code,
        slots: &["paper", "abstract", "technique", "sub_techniques", "file_snippets"],
        contract: AnswerContract::CodeWithDocs,
        core_contract: true,
        body: "# Task\n\
The code files below are the official implementation of a technique from the paper \"{paper}\". Turn them into one clean, documented, self-contained and executable code block.\n\n\
# Input\n\
Abstract:\n{abstract}\n\n\
Technique:\n{technique}\n\n\
Sub-techniques with their verified code:\n{sub_techniques}\n\n\
Code files:\n{file_snippets}\n\n\
# Workflow\n\
1. Work out the technique's inputs, outputs and steps.\n\
2. Reuse the sub-technique code in full; take anything not covered from the code files.\n\
3. Refactor: remove hard-coded values, isolate the core algorithm, add docstrings and type hints.\n\
4. Finish with a runnable example that doubles as a test.\n\
5. Write 5-10 sentences of documentation on the logic, options and usage.\n\n\
# Requirements\n\
- All imports at the top of the block.\n\
- Keep the original algorithmic steps, parameters and comments; only minimal renaming or signature changes are allowed.\n\
- Every function and method has a docstring and type hints.\n\
- The file ends with a main block that starts with the comment `# TEST BLOCK` and uses parameters from the paper or repository (state any defaults you choose).\n\n\
# Output\n\
Return the code block and then the documentation, each between its own pair of ``` markers, at the end of your reply.\n\
If the technique cannot stand alone without other modules, or the files contain no direct implementation of it, answer None instead.",
    },
    Template {
        id: TemplateId::VerifyCode,
        role: ModelRole::Code,
        slots: &["paper", "technique", "file_snippets", "code"],
        contract: AnswerContract::Boolean,
        core_contract: true,
        body: "# Task\n\
Check whether a code block faithfully implements a technique from the paper \"{paper}\" and follows the given source files.\n\n\
# Input\n\
Technique:\n{technique}\n\n\
Source files:\n{file_snippets}\n\n\
Code block:\n{code}\n\n\
# Output\n\
1. False if the code is unrelated to the technique.\n\
2. False if its core logic cannot be found in the source files.\n\
3. False if it contains logic outside the technique's description, such as a full algorithm when only a submodule is described.\n\
4. True only if it implements exactly the described technique, adds nothing beyond it, and follows the source files.\n\n\
Explain your reasoning for each point, then put True or False between two ``` markers at the very end of your reply.",
    },
    Template {
        id: TemplateId::DecomposeTask,
        role: ModelRole::Model,
        slots: &["description"],
        contract: AnswerContract::PairList,
        core_contract: true,
        body: "# Task\n\
Break an academic task down into the fundamental techniques it is built from.\n\n\
# Input\n\
Task:\n{description}\n\n\
# Output\n\
A list of (name, description) pairs like [(\"...\", \"...\"), (\"...\", \"...\")], most important first, written plainly without parentheses.\n\
Each pair is a distinct, reusable academic concept that other papers could also mention, and that the task names or directly depends on.\n\
Skip vague or trivial concepts; every entry should map to specific code.\n\
If the task involves no academic concept at all (pure engineering, configuration or organization work), answer None.\n\n",
    },
    Template {
        id: TemplateId::RankReferences,
        role: ModelRole::Paper,
        slots: &["paper", "abstract", "references"],
        contract: AnswerContract::NumberList,
        core_contract: false,
        body: "# Task\n\
The paper \"{paper}\" cites the works listed below.\n\
Abstract:\n{abstract}\n\n\
References (one per line, numbered):\n{references}\n\n\
Score each reference from 0 to 10 by how much it contributes techniques that the paper builds on and how strongly its methods overlap with the paper.\n\n\
# Output\n\
A list of numbers, one score per reference, in the same order as the references.\n\n",
    },
    Template {
        id: TemplateId::DebugCode,
        role: ModelRole::Code,
        slots: &["technique", "code", "exit_status", "stdout", "stderr"],
        contract: AnswerContract::CodeWithDocs,
        core_contract: false,
        body: "# Task\n\
The program below implements the technique and ends with a `# TEST BLOCK` section, but running it failed. Fix it.\n\n\
# Input\n\
Technique:\n{technique}\n\n\
Program:\n{code}\n\n\
Exit status: {exit_status}\n\
Standard output:\n{stdout}\n\n\
Standard error:\n{stderr}\n\n\
# Output\n\
Change only what is needed to make the program run successfully; keep the algorithm and the `# TEST BLOCK` section.\n\
Return the corrected program and then a short documentation paragraph, each between its own pair of ``` markers, at the end of your reply.\n\
If the failure cannot be fixed inside this program (for example a missing external package), answer None.",
    },
];

/// Rendered body plus the shared answer footer for templates whose body leaves it out.
pub(crate) fn render_full(template: &Template, values: &Slots) -> Result<String, RenderError> {
    let mut text = template.render(values)?;
    if !text.contains("``` markers") {
        text.push_str(ANSWER_FOOTER);
    } else if text.ends_with("\n\n") {
        text.truncate(text.trim_end().len());
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete() {
        assert_eq!(TEMPLATES.len(), TemplateId::ALL.len());
        for id in TemplateId::ALL {
            let t = id.template();
            assert_eq!(TemplateId::parse(id.as_str()), Some(id));
            for s in t.slots {
                assert!(t.body.contains(&format!("{{{s}}}")), "{id} never uses slot {s}");
            }
        }
        assert_eq!(TEMPLATES.iter().filter(|t| t.core_contract).count(), 11);
    }

    #[test]
    fn unbound_slot_fails() {
        let err = TemplateId::ExtractReferences.template().render(&Slots::new()).unwrap_err();
        assert_eq!(
            err,
            RenderError::UnboundSlot {
                template: TemplateId::ExtractReferences,
                slot: "bbl".into()
            }
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = TemplateId::DecomposeTask.template();
        let out = render_full(t, &slots([("description", "use {description} literally".into())])).unwrap();
        assert!(out.contains("use {description} literally"));
        assert!(out.trim_end().ends_with("reply."));
    }
}
