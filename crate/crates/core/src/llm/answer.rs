//! Final-answer extraction: every prompt asks the model to wrap its answer
//! between triple-backtick fences at the end of the reply.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::literal::{self, Literal};

/// Marker that opens the runnable example in synthesized code.
pub const TEST_BLOCK_MARKER: &str = "# TEST BLOCK";

const FENCE: &str = "```";

const LANGUAGE_TAGS: &[&str] = &[
    "python", "py", "python3", "json", "text", "txt", "plaintext", "markdown", "md", "bash", "sh",
    "shell", "latex", "tex", "yaml", "bibtex", "rust", "javascript", "js", "typescript", "ts",
    "cpp", "c", "java", "go", "julia",
];

/// Contents of every fenced block, in order, with any language tag line removed.
pub fn fenced_blocks(response: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = response;
    while let Some(open) = rest.find(FENCE) {
        let after = &rest[open + FENCE.len()..];
        let Some(close) = after.find(FENCE) else {
            break;
        };
        blocks.push(strip_language_tag(&after[..close]));
        rest = &after[close + FENCE.len()..];
    }
    blocks
}

fn strip_language_tag(raw: &str) -> String {
    if let Some((first, body)) = raw.split_once('\n') {
        let tag = first.trim();
        if tag.is_empty() || LANGUAGE_TAGS.contains(&tag.to_ascii_lowercase().as_str()) {
            return body.to_owned();
        }
    }
    raw.to_owned()
}

fn is_none_marker(s: &str) -> bool {
    let t = s.trim().trim_end_matches('.');
    t.is_empty() || t.eq_ignore_ascii_case("none") || t == "null" || t == "[]"
}

/// Shape the final fenced answer must have for a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerContract {
    /// List of strings; `None` means empty.
    StringList,
    /// Free text or `None`.
    OptionalText,
    /// List of technique dicts with `name`, `type`, `description` and optional `components`.
    TechniqueList,
    /// List of 2-tuples of strings; `None` means empty.
    PairList,
    /// A code block followed by a documentation block, or `None`.
    CodeWithDocs,
    /// `True` or `False`.
    Boolean,
    /// List of numbers.
    NumberList,
}

impl AnswerContract {
    pub fn describe(self) -> &'static str {
        match self {
            AnswerContract::StringList => r#"a list of strings such as ["...", "..."], or None"#,
            AnswerContract::OptionalText => "plain text, or None",
            AnswerContract::TechniqueList => {
                "a list of dictionaries with keys name, type, description and optional components"
            }
            AnswerContract::PairList => r#"a list of pairs such as [("...", "..."), ...], or None"#,
            AnswerContract::CodeWithDocs => {
                "a code block containing a `# TEST BLOCK` section followed by a documentation block, or None"
            }
            AnswerContract::Boolean => "True or False",
            AnswerContract::NumberList => "a list of numbers",
        }
    }

    pub fn parse(self, response: &str) -> Result<Answer, String> {
        let blocks = fenced_blocks(response);
        let last = blocks
            .last()
            .ok_or_else(|| "response contains no fenced answer block".to_owned())?;
        match self {
            AnswerContract::StringList => parse_strings(last).map(Answer::Strings),
            AnswerContract::OptionalText => Ok(Answer::Text(
                (!is_none_marker(last)).then(|| last.trim().to_owned()),
            )),
            AnswerContract::TechniqueList => parse_techniques(last).map(Answer::Techniques),
            AnswerContract::PairList => parse_pairs(last).map(Answer::Pairs),
            AnswerContract::CodeWithDocs => parse_code(&blocks).map(Answer::Code),
            AnswerContract::Boolean => parse_bool(last).map(Answer::Bool),
            AnswerContract::NumberList => parse_numbers(last).map(Answer::Numbers),
        }
    }
}

/// A technique as emitted by the extraction prompt, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTechnique {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub description: String,
    #[serde(default)]
    pub components: Vec<RawTechnique>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeWithDocs {
    pub implementation: String,
    pub test_script: String,
    pub documentation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Strings(Vec<String>),
    Text(Option<String>),
    Techniques(Vec<RawTechnique>),
    Pairs(Vec<(String, String)>),
    Code(Option<CodeWithDocs>),
    Bool(bool),
    Numbers(Vec<f64>),
}

fn parse_literal(block: &str) -> Result<Literal, String> {
    literal::parse(block.trim()).map_err(|e| format!("answer is not a valid literal: {e}"))
}

fn parse_strings(block: &str) -> Result<Vec<String>, String> {
    if is_none_marker(block) {
        return Ok(Vec::new());
    }
    match parse_literal(block)? {
        Literal::None => Ok(Vec::new()),
        Literal::Str(s) => Ok(vec![s]),
        Literal::List(items) => items
            .into_iter()
            .map(|i| match i {
                Literal::Str(s) => Ok(s),
                other => Err(format!("expected a string item, found {other:?}")),
            })
            .collect(),
        other => Err(format!("expected a list of strings, found {other:?}")),
    }
}

fn parse_pairs(block: &str) -> Result<Vec<(String, String)>, String> {
    if is_none_marker(block) {
        return Ok(Vec::new());
    }
    let items = match parse_literal(block)? {
        Literal::None => return Ok(Vec::new()),
        Literal::List(items) => items,
        other => return Err(format!("expected a list of pairs, found {other:?}")),
    };
    // A bare single pair parses as a two-string list.
    if items.len() == 2 && items.iter().all(|i| matches!(i, Literal::Str(_))) {
        let mut it = items.into_iter();
        if let (Some(Literal::Str(a)), Some(Literal::Str(b))) = (it.next(), it.next()) {
            return Ok(vec![(a, b)]);
        }
        unreachable!()
    }
    items
        .into_iter()
        .map(|i| match i {
            Literal::List(pair) if pair.len() == 2 => match (&pair[0], &pair[1]) {
                (Literal::Str(a), Literal::Str(b)) => Ok((a.clone(), b.clone())),
                _ => Err("pair items must be strings".to_owned()),
            },
            other => Err(format!("expected a pair, found {other:?}")),
        })
        .collect()
}

fn parse_bool(block: &str) -> Result<bool, String> {
    let t = block.trim().trim_end_matches('.').trim();
    match t.to_ascii_lowercase().as_str() {
        "true" | "yes" => Ok(true),
        "false" | "no" => Ok(false),
        _ => Err(format!("expected True or False, found `{t}`")),
    }
}

fn parse_numbers(block: &str) -> Result<Vec<f64>, String> {
    match parse_literal(block)? {
        Literal::List(items) => items
            .into_iter()
            .map(|i| match i {
                Literal::Number(n) if n.is_finite() => Ok(n),
                other => Err(format!("expected a number, found {other:?}")),
            })
            .collect(),
        Literal::Number(n) => Ok(vec![n]),
        other => Err(format!("expected a list of numbers, found {other:?}")),
    }
}

fn parse_techniques(block: &str) -> Result<Vec<RawTechnique>, String> {
    if is_none_marker(block) {
        return Ok(Vec::new());
    }
    match parse_literal(block)? {
        Literal::None => Ok(Vec::new()),
        Literal::List(items) => items.iter().map(technique_from).collect(),
        d @ Literal::Dict(_) => Ok(vec![technique_from(&d)?]),
        other => Err(format!("expected a list of dictionaries, found {other:?}")),
    }
}

fn technique_from(lit: &Literal) -> Result<RawTechnique, String> {
    let Literal::Dict(map) = lit else {
        return Err(format!("expected a dictionary, found {lit:?}"));
    };
    let field = |m: &BTreeMap<String, Literal>, k: &str| -> Result<String, String> {
        m.get(k)
            .and_then(Literal::as_str)
            .map(str::to_owned)
            .ok_or_else(|| format!("technique entry is missing string field `{k}`"))
    };
    let components = match map.get("components") {
        None | Some(Literal::None) => Vec::new(),
        Some(Literal::List(items)) => items.iter().map(technique_from).collect::<Result<_, _>>()?,
        Some(other) => return Err(format!("components must be a list, found {other:?}")),
    };
    Ok(RawTechnique {
        name: field(map, "name")?,
        kind: field(map, "type")?,
        description: field(map, "description")?,
        components,
    })
}

fn parse_code(blocks: &[String]) -> Result<Option<CodeWithDocs>, String> {
    let Some(last) = blocks.last() else {
        return Err("no fenced blocks".into());
    };
    if is_none_marker(last) && blocks.len() == 1 || last.trim() == "None" {
        return Ok(None);
    }
    if blocks.len() < 2 {
        return Err("expected a code block followed by a documentation block".into());
    }
    let code = &blocks[blocks.len() - 2];
    let documentation = last.trim().to_owned();
    let (implementation, test_script) = split_test_block(code)
        .ok_or_else(|| format!("code block lacks the `{TEST_BLOCK_MARKER}` section"))?;
    Ok(Some(CodeWithDocs {
        implementation,
        test_script,
        documentation,
    }))
}

/// Splits a program at the line carrying the test-block marker.
pub fn split_test_block(code: &str) -> Option<(String, String)> {
    let mut offset = 0;
    for line in code.split_inclusive('\n') {
        if line.trim_start().starts_with(TEST_BLOCK_MARKER) {
            return Some((code[..offset].to_owned(), code[offset..].to_owned()));
        }
        offset += line.len();
    }
    None
}
