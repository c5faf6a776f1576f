//! Just enough LaTeX handling to feed the extraction prompt: comment
//! stripping, `\input`/`\include` inlining, section segmentation and
//! display-math extraction. Math is kept verbatim.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::curator::LatexBundle;

const MAX_INCLUDE_DEPTH: usize = 8;

/// Removes `%` comments, keeping escaped `\%` and line structure.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        let bytes = line.as_bytes();
        let mut cut = None;
        let mut backslashes = 0;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'%' && backslashes % 2 == 0 {
                cut = Some(i);
                break;
            }
            backslashes = if b == b'\\' { backslashes + 1 } else { 0 };
        }
        match cut {
            Some(i) => {
                out.push_str(&line[..i]);
                if line.ends_with('\n') {
                    out.push('\n');
                }
            }
            None => out.push_str(line),
        }
    }
    out
}

/// Contents of the balanced `{...}` group starting at byte `open`, and the index after it.
fn braced(text: &str, open: usize) -> Option<(&str, usize)> {
    let bytes = text.as_bytes();
    if bytes.get(open) != Some(&b'{') {
        return None;
    }
    let mut depth = 0usize;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if escaped {
            escaped = false;
            continue;
        }
        match b {
            b'\\' => escaped = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&text[open + 1..i], i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// The main file with comments stripped and `\input`/`\include` replaced by
/// the referenced files. Missing files are left as they are.
pub fn inline_includes(bundle: &LatexBundle) -> String {
    fn expand(bundle: &LatexBundle, path: &str, depth: usize) -> String {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"\\(?:input|include)\s*\{").unwrap());
        let text = strip_comments(bundle.get(path).unwrap_or_default());
        if depth >= MAX_INCLUDE_DEPTH {
            return text;
        }
        let dir = path.rsplit_once('/').map(|(d, _)| d);
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        while let Some(m) = re.find_at(&text, pos) {
            let Some((name, after)) = braced(&text, m.end() - 1) else { break };
            out.push_str(&text[pos..m.start()]);
            let name = name.trim();
            let found = [name.to_owned(), format!("{name}.tex")]
                .into_iter()
                .flat_map(|n| {
                    let rel = dir.map(|d| format!("{d}/{n}"));
                    [Some(n), rel]
                })
                .flatten()
                .find(|p| bundle.get(p).is_some());
            match found {
                Some(p) => out.push_str(&expand(bundle, &p, depth + 1)),
                None => out.push_str(&text[m.start()..after]),
            }
            pos = after;
        }
        out.push_str(&text[pos..]);
        out
    }
    expand(bundle, bundle.main_file(), 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    /// 1 for `\section`, 2 for `\subsection`, and so on.
    pub level: u8,
    pub body: String,
}

/// A paper's text prepared for extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperText {
    pub title: String,
    pub abstract_text: String,
    pub sections: Vec<Section>,
    pub equations: Vec<String>,
    /// Whitespace-separated words in the inlined source.
    pub source_tokens: u64,
}

impl PaperText {
    pub fn has_body(&self) -> bool {
        !self.abstract_text.trim().is_empty() || self.sections.iter().any(|s| !s.body.trim().is_empty())
    }

    /// Sections rendered as markdown-style headings, the form shown to the model.
    pub fn render_sections(&self) -> String {
        let mut out = String::new();
        if !self.abstract_text.trim().is_empty() {
            out.push_str("## Abstract\n");
            out.push_str(self.abstract_text.trim());
            out.push_str("\n\n");
        }
        for s in &self.sections {
            out.push_str(&"#".repeat(usize::from(s.level) + 1));
            out.push(' ');
            out.push_str(&s.title);
            out.push('\n');
            out.push_str(s.body.trim());
            out.push_str("\n\n");
        }
        out
    }

    pub fn render_equations(&self) -> String {
        self.equations.iter().enumerate().map(|(i, e)| format!("({}) {e}\n", i + 1)).collect()
    }
}

fn command_argument(text: &str, command: &str) -> Option<String> {
    let at = text.find(command)?;
    let rest = &text[at + command.len()..];
    // Skip an optional short title, as in \title[short]{long}.
    let mut offset = at + command.len() + (rest.len() - rest.trim_start().len());
    if text[offset..].starts_with('[') {
        offset += text[offset..].find(']')? + 1;
    }
    braced(text, offset).map(|(s, _)| collapse(s))
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn environment(text: &str, name: &str) -> Option<String> {
    let open = format!("\\begin{{{name}}}");
    let close = format!("\\end{{{name}}}");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim().to_owned())
}

/// Splits the document body by sectioning commands.
pub fn segment_sections(body: &str) -> Vec<Section> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\\(section|subsection|subsubsection|paragraph)\*?\s*\{").unwrap());
    let mut heads: Vec<(usize, usize, String, u8)> = Vec::new();
    for c in re.captures_iter(body) {
        let m = c.get(0).unwrap();
        let Some((title, after)) = braced(body, m.end() - 1) else { continue };
        let level = match &c[1] {
            "section" => 1,
            "subsection" => 2,
            "subsubsection" => 3,
            _ => 4,
        };
        heads.push((m.start(), after, collapse(title), level));
    }
    let mut out = Vec::new();
    if let Some(first) = heads.first() {
        let lead = body[..first.0].trim();
        if !lead.is_empty() {
            out.push(Section {
                title: "Introduction".into(),
                level: 1,
                body: lead.to_owned(),
            });
        }
    } else if !body.trim().is_empty() {
        out.push(Section {
            title: "Body".into(),
            level: 1,
            body: body.trim().to_owned(),
        });
    }
    for (i, (_, after, title, level)) in heads.iter().enumerate() {
        let end = heads.get(i + 1).map_or(body.len(), |h| h.0);
        out.push(Section {
            title: title.clone(),
            level: *level,
            body: body[*after..end].trim().to_owned(),
        });
    }
    out
}

const MATH_ENVIRONMENTS: [&str; 7] = ["equation", "align", "gather", "multline", "eqnarray", "displaymath", "flalign"];

/// Display math in document order: the usual numbered environments (starred
/// or not), `\[ ... \]` and `$$ ... $$`. Comments are ignored and includes
/// are followed.
pub fn extract_equations(bundle: &LatexBundle) -> Vec<String> {
    equations_in(&inline_includes(bundle))
}

pub(crate) fn equations_in(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(&format!(r"\\begin\{{({})(\*?)\}}|\\\[|\$\$", MATH_ENVIRONMENTS.join("|"))).unwrap()
    });
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(c) = re.captures_at(text, pos) {
        let m = c.get(0).unwrap();
        let preceding = text[..m.start()].bytes().rev().take_while(|&b| b == b'\\').count();
        if preceding % 2 == 1 {
            // An escaped delimiter such as `\\[2pt]` or `\$$`.
            pos = m.start() + 1;
            continue;
        }
        let close = match c.get(1) {
            Some(env) => format!("\\end{{{}{}}}", env.as_str(), &c[2]),
            None if m.as_str() == "$$" => "$$".to_owned(),
            None => "\\]".to_owned(),
        };
        let Some(rel) = text[m.end()..].find(&close) else { break };
        let inner = text[m.end()..m.end() + rel].trim();
        if !inner.is_empty() {
            out.push(inner.to_owned());
        }
        pos = m.end() + rel + close.len();
    }
    out
}

/// Parses the bundle into title, abstract, sections and equations.
pub fn parse_paper(bundle: &LatexBundle) -> PaperText {
    let full = inline_includes(bundle);
    let body = match full.find("\\begin{document}") {
        Some(i) => {
            let rest = &full[i + "\\begin{document}".len()..];
            rest.find("\\end{document}").map_or(rest, |j| &rest[..j])
        }
        None => full.as_str(),
    };
    let abstract_text = environment(body, "abstract").map(|a| collapse(&a)).unwrap_or_default();
    let without_abstract = match (body.find("\\begin{abstract}"), body.find("\\end{abstract}")) {
        (Some(a), Some(b)) if a < b => format!("{}{}", &body[..a], &body[b + "\\end{abstract}".len()..]),
        _ => body.to_owned(),
    };
    let without_front = strip_front_matter(&without_abstract);
    PaperText {
        title: command_argument(&full, "\\title").unwrap_or_default(),
        abstract_text,
        sections: segment_sections(&without_front),
        equations: equations_in(body),
        source_tokens: full.split_whitespace().count() as u64,
    }
}

fn strip_front_matter(body: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\\(maketitle|bibliographystyle\{[^}]*\}|bibliography\{[^}]*\})").unwrap());
    re.replace_all(body, "").into_owned()
}
