//! Deterministic node ids so rebuilds upsert instead of duplicating.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

/// Paper id: the arXiv id when known, otherwise a hash of the normalized title.
pub fn paper_id(arxiv_id: Option<&str>, title: &str) -> String {
    match arxiv_id.map(str::trim).filter(|s| !s.is_empty()) {
        Some(id) => id.to_owned(),
        None => {
            let digest = Sha256::digest(crate::curator::normalize_title(title).as_bytes());
            let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
            format!("title-{hex}")
        }
    }
}

/// Lowercase ascii slug with single dashes; never empty.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    let mut dash = false;
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            if dash && !out.is_empty() {
                out.push('-');
            }
            out.push(c);
            dash = false;
        } else {
            dash = true;
        }
    }
    if out.is_empty() {
        out.push_str("unnamed");
    }
    out
}

pub fn technique_id(paper_id: &str, name: &str) -> String {
    format!("{paper_id}/t/{}", slug(name))
}

pub fn code_id(paper_id: &str, technique_name: &str) -> String {
    format!("{paper_id}/c/{}", slug(technique_name))
}

/// Returns `base` or `base-2`, `base-3`, ... whichever is not yet taken, and records it.
pub fn disambiguate(base: String, taken: &mut BTreeSet<String>) -> String {
    if taken.insert(base.clone()) {
        return base;
    }
    let mut n = 2;
    loop {
        let candidate = format!("{base}-{n}");
        if taken.insert(candidate.clone()) {
            return candidate;
        }
        n += 1;
    }
}
