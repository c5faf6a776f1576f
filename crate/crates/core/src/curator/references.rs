use std::collections::BTreeSet;

use super::{normalize_title, CurateError};
use crate::graph::PaperMetadata;
use crate::llm::{slots, Answer, Gateway, LlmError, TemplateId};

/// Reference titles from raw `.bbl` text, deduplicated by normalized title in source order.
pub fn extract_references(bbl: &str, gateway: &Gateway) -> Result<Vec<String>, CurateError> {
    if bbl.trim().is_empty() {
        return Ok(Vec::new());
    }
    let titles = gateway.chat_strings(TemplateId::ExtractReferences, &slots([("bbl", bbl.to_owned())]))?;
    let mut seen = BTreeSet::new();
    Ok(titles
        .into_iter()
        .map(|t| t.trim().to_owned())
        .filter(|t| {
            let n = normalize_title(t);
            !n.is_empty() && seen.insert(n)
        })
        .collect())
}

/// Keeps the `k` references the model scores highest for the target paper.
///
/// Equal scores are ordered by title, so the result is a deterministic
/// function of the scores.
pub fn rank_references(
    target: &PaperMetadata,
    references: &[String],
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<String>, CurateError> {
    if k == 0 {
        return Err(CurateError::InvalidK);
    }
    if references.is_empty() {
        return Ok(Vec::new());
    }
    let numbered: String = references
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {t}\n", i + 1))
        .collect();
    let answer = gateway.chat(
        TemplateId::RankReferences,
        &slots([
            ("paper", target.title.clone()),
            ("abstract", target.abstract_text.clone()),
            ("references", numbered),
        ]),
    )?;
    let Answer::Numbers(scores) = answer else {
        return Err(LlmError::UnexpectedAnswer {
            template: TemplateId::RankReferences,
            expected: "number list",
        }
        .into());
    };
    if scores.len() != references.len() {
        return Err(CurateError::ScoreCount {
            expected: references.len(),
            found: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..references.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| references[a].cmp(&references[b]))
            .then(a.cmp(&b))
    });
    Ok(order.into_iter().take(k).map(|i| references[i].clone()).collect())
}
