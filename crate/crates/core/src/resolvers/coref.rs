//! Antecedent extraction for pronoun coreference.

use thiserror::Error;

use crate::model::{Diagnostics, Snippet};
use crate::tokenize::{tokenize, Token};

use super::stopwords::is_stopword;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("nothing left after stripping the guided response")]
pub struct EmptySpan;

const GUIDED_TRAILING: &[char] = &['"', '\'', '.', ' '];

/// Guided responses continue an opened quote; only the closing quote,
/// period, or spaces at the end need removing.
pub fn resolve_coref_guided(llm_output: &str) -> Result<String, EmptySpan> {
    let s = llm_output.trim_end_matches(GUIDED_TRAILING);
    if s.is_empty() {
        Err(EmptySpan)
    } else {
        Ok(s.to_string())
    }
}

/// Strips a leading `"<pronoun>" refers to "` when the caller passes the full
/// guided answer (answer prefix included), then applies
/// [`resolve_coref_guided`].
pub fn resolve_coref_guided_answer(answer: &str) -> Result<String, EmptySpan> {
    const MARK: &str = "refers to \"";
    let body = match answer.find(MARK) {
        Some(i) if answer[..i].trim_start().starts_with('"') => &answer[i + MARK.len()..],
        _ => answer,
    };
    resolve_coref_guided(body)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefResolution {
    pub span: String,
    pub aligned: bool,
    pub diagnostics: Diagnostics,
}

fn quoted_segments(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in s.char_indices() {
        match (c, open) {
            ('"' | '“', None) => open = Some(i + c.len_utf8()),
            ('"' | '”', Some(st)) => {
                out.push(&s[st..i]);
                open = None;
            }
            _ => {}
        }
    }
    out
}

const MARKERS: [&str; 3] = ["refers to", "referring to", "refer to"];

/// Step 1 of the unguided resolver: pick the candidate phrase out of a
/// free-text answer.
pub fn unguided_candidate<'a>(llm_output: &'a str, pronoun: Option<&str>) -> &'a str {
    let quoted = quoted_segments(llm_output)
        .into_iter()
        .rfind(|q| {
            let q = q.trim();
            !q.is_empty() && pronoun.is_none_or(|p| !q.eq_ignore_ascii_case(p))
        });
    if let Some(q) = quoted {
        return q.trim();
    }
    let lower = llm_output.to_lowercase();
    let marker_end = MARKERS
        .iter()
        .filter_map(|m| lower.rfind(m).map(|i| i + m.len()))
        .max();
    match marker_end {
        // lowercase mapping can shift byte offsets for non-ASCII text
        Some(end) if lower.len() == llm_output.len() => llm_output[end..].trim(),
        _ => llm_output.trim(),
    }
}

fn is_content(t: &Token) -> bool {
    !t.is_punct() && !is_stopword(&t.folded())
}

/// Maps a free-text answer back onto the snippet: the longest contiguous
/// run of candidate tokens that also appears contiguously in the snippet,
/// earliest on ties, ignoring runs made only of stopwords or punctuation.
pub fn resolve_coref_unguided(llm_output: &str, snippet: &Snippet) -> CorefResolution {
    let candidate = unguided_candidate(llm_output, snippet.side());
    let cand = tokenize(candidate);
    let input = tokenize(&snippet.text);
    let cand_f: Vec<String> = cand.iter().map(Token::folded).collect();
    let input_f: Vec<String> = input.iter().map(Token::folded).collect();

    // (len, cand_start, input_start)
    let mut best: Option<(usize, usize, usize)> = None;
    for i in 0..cand.len() {
        for j in 0..input.len() {
            let mut len = 0;
            while i + len < cand.len() && j + len < input.len() && cand_f[i + len] == input_f[j + len] {
                len += 1;
            }
            if len == 0 || !cand[i..i + len].iter().any(is_content) {
                continue;
            }
            // trim trailing punctuation from the run
            while len > 0 && cand[i + len - 1].is_punct() {
                len -= 1;
            }
            if best.is_none_or(|(bl, _, _)| len > bl) {
                best = Some((len, i, j));
            }
        }
    }
    let mut diagnostics = Diagnostics::new();
    match best {
        Some((len, _, j)) => {
            let span = snippet.text[input[j].start..input[j + len - 1].end].to_string();
            diagnostics.set("aligned_tokens", len);
            CorefResolution {
                span,
                aligned: true,
                diagnostics,
            }
        }
        None => {
            diagnostics.set("unaligned", 1);
            CorefResolution {
                span: candidate.trim_end_matches(['.', ' ']).to_string(),
                aligned: false,
                diagnostics,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A3: &str = "[...] Her current regimen for her MS is Rebif Monday, Wednesday, and Friday and 1 gram of methylprednisolone p.o. every month. This had been working previously; however, she feels that her symptoms return before her next dose of methylprednisolone is due.";

    fn snippet() -> Snippet {
        Snippet::new("a3", A3, Some("This".into())).unwrap()
    }

    #[test]
    fn guided_strip() {
        assert_eq!(
            resolve_coref_guided("her current regimen for her MS\"").unwrap(),
            "her current regimen for her MS"
        );
        assert_eq!(resolve_coref_guided("some tremors\" .").unwrap(), "some tremors");
        assert_eq!(resolve_coref_guided("\""), Err(EmptySpan));
    }

    #[test]
    fn guided_full_answer() {
        assert_eq!(
            resolve_coref_guided_answer("\"that\" refers to \"her CEA\"").unwrap(),
            "her CEA"
        );
        assert_eq!(resolve_coref_guided_answer("her CEA\"").unwrap(), "her CEA");
    }

    #[test]
    fn unguided_transcript_aligns_to_rebif() {
        // Candidate after "referring to" is "the Rebif regimen."; no two
        // adjacent candidate tokens occur adjacently in the snippet, "the"
        // is a stopword, so the earliest content run is "Rebif".
        let out = "The sentence is unclear, but it seems to be referring to the Rebif regimen.";
        assert_eq!(unguided_candidate(out, Some("This")), "the Rebif regimen.");
        let r = resolve_coref_unguided(out, &snippet());
        assert_eq!(r.span, "Rebif");
        assert!(r.aligned);
    }

    #[test]
    fn unguided_quoted_phrase() {
        let out = "\"This\" refers to \"her current regimen for her MS\".";
        let r = resolve_coref_unguided(out, &snippet());
        assert_eq!(r.span, "Her current regimen for her MS");
        assert!(r.aligned);
    }

    #[test]
    fn unguided_paraphrase_is_flagged() {
        let r = resolve_coref_unguided("It refers to the injections.", &snippet());
        assert!(!r.aligned);
        assert_eq!(r.span, "the injections");
        assert_eq!(r.diagnostics.get("unaligned"), 1);
    }
}
