//! Binary token labeling of an abstract from a bulleted list of arms.

use std::collections::HashSet;

use crate::model::Diagnostics;
use crate::tokenize::{tokenize, Token};

use super::stopwords::{is_stopword, EVIDENCE_EXTRAS};

/// Maximum run of zeros bridged between two positive tokens; `None` bridges
/// any gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapFill(pub Option<usize>);

impl Default for GapFill {
    fn default() -> Self {
        GapFill(Some(1))
    }
}

impl std::str::FromStr for GapFill {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "unbounded" => Ok(GapFill(None)),
            _ => s.parse().map(|n| GapFill(Some(n))),
        }
    }
}

fn is_bullet(surface: &str) -> bool {
    matches!(surface, "-" | "*" | "•" | "–" | "—" | "+")
}

fn is_list_number(surface: &str) -> bool {
    !surface.is_empty() && surface.chars().all(|c| c.is_ascii_digit())
}

/// Output tokens that survive noise removal, case-folded.
///
/// Drops bullet markers, list numbering (`1.` / `2)` at line start),
/// punctuation-only tokens, stopwords, and [`EVIDENCE_EXTRAS`].
pub fn evidence_terms(llm_output: &str) -> HashSet<String> {
    let mut keep = HashSet::new();
    for line in llm_output.lines() {
        let toks = tokenize(line);
        let mut skip_prefix = 0;
        // leading bullet / enumeration markers
        while skip_prefix < toks.len() {
            let s = toks[skip_prefix].surface.as_str();
            let next = toks.get(skip_prefix + 1).map(|t| t.surface.as_str());
            if is_bullet(s) {
                skip_prefix += 1;
            } else if is_list_number(s) && matches!(next, Some(".") | Some(")")) {
                skip_prefix += 2;
            } else {
                break;
            }
        }
        for t in &toks[skip_prefix.min(toks.len())..] {
            let f = t.folded();
            if t.is_punct() || is_bullet(&f) || is_stopword(&f) || EVIDENCE_EXTRAS.contains(&f.as_str()) {
                continue;
            }
            keep.insert(f);
        }
    }
    keep
}

/// Flips runs of at most `gap` zeros that sit strictly between two ones.
pub fn fill_gaps(labels: &mut [u8], gap: GapFill) {
    let mut last_one: Option<usize> = None;
    for i in 0..labels.len() {
        if labels[i] == 1 {
            if let Some(p) = last_one {
                let run = i - p - 1;
                if run > 0 && gap.0.is_none_or(|g| run <= g) {
                    labels[p + 1..i].iter_mut().for_each(|l| *l = 1);
                }
            }
            last_one = Some(i);
        }
    }
}

fn is_acronym(surface: &str) -> bool {
    surface.chars().any(char::is_alphabetic)
        && surface.chars().all(|c| c.is_alphanumeric() && !c.is_lowercase())
}

/// Labels `( ACR )` when the token before the parenthesis is positive and the
/// parenthetical is a single all-caps token.
pub fn fill_parenthetical_acronyms(tokens: &[Token], labels: &mut [u8]) {
    for i in 1..tokens.len().saturating_sub(2) {
        if labels[i - 1] == 1
            && tokens[i].surface == "("
            && is_acronym(&tokens[i + 1].surface)
            && tokens[i + 2].surface == ")"
        {
            labels[i..i + 3].iter_mut().for_each(|l| *l = 1);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceLabels {
    pub labels: Vec<u8>,
    /// Labels after direct matching only, before any fill step.
    pub matched: Vec<u8>,
    pub diagnostics: Diagnostics,
}

pub fn resolve_evidence_tokens(llm_output: &str, input_tokens: &[Token], gap: GapFill) -> EvidenceLabels {
    let terms = evidence_terms(llm_output);
    let matched: Vec<u8> = input_tokens
        .iter()
        .map(|t| u8::from(terms.contains(&t.folded())))
        .collect();
    let mut labels = matched.clone();
    fill_gaps(&mut labels, gap);
    fill_parenthetical_acronyms(input_tokens, &mut labels);
    let diagnostics = Diagnostics::new()
        .with("output_terms", terms.len())
        .with("matched_tokens", matched.iter().filter(|&&l| l == 1).count())
        .with(
            "filled_tokens",
            labels.iter().zip(&matched).filter(|(a, b)| a != b).count(),
        );
    EvidenceLabels {
        labels,
        matched,
        diagnostics,
    }
}
