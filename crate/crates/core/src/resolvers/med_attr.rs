//! Medication attribute resolvers: token labels, BIO phrases, relations.

use std::sync::LazyLock;

use regex::Regex;

use crate::model::{AttrKind, BioTag, Diagnostics, MedRecord, TypedLabel};
use crate::tokenize::{find_subsequence, tokenize, Token};

static LABEL_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*[-*•]?\s*"(?P<span>.*)"\s*:\s*(?P<label>[^"]*?)\s*$"#).unwrap());

/// `(span, label)` pairs from `-"span": label` lines, plus the count of lines
/// that did not match.
pub fn labeled_lines(llm_output: &str) -> (Vec<(String, String)>, usize) {
    let mut out = Vec::new();
    let mut bad = 0;
    for line in llm_output.lines().filter(|l| !l.trim().is_empty()) {
        match LABEL_LINE.captures(line) {
            Some(c) => out.push((c["span"].to_string(), c["label"].to_string())),
            None => bad += 1,
        }
    }
    (out, bad)
}

fn map_label(label: &str) -> Option<AttrKind> {
    label.parse().ok()
}

struct Aligner {
    folded: Vec<String>,
    cursor: usize,
}

impl Aligner {
    fn new(tokens: &[Token]) -> Self {
        Self {
            folded: tokens.iter().map(Token::folded).collect(),
            cursor: 0,
        }
    }

    /// Next unconsumed contiguous match of `span`'s tokens.
    fn align(&mut self, span: &str) -> Option<std::ops::Range<usize>> {
        let needle: Vec<String> = tokenize(span).iter().map(Token::folded).collect();
        let start = find_subsequence(&self.folded, &needle, self.cursor)?;
        self.cursor = start + needle.len();
        Some(start..self.cursor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedResolution {
    pub labels: Vec<TypedLabel>,
    pub diagnostics: Diagnostics,
}

/// Token-level labels. Each line's quoted token is aligned to the next
/// unconsumed matching input token; labels outside the six types map to
/// `none`, as do unaligned input tokens.
pub fn resolve_med_attr_token(llm_output: &str, input_tokens: &[Token]) -> TypedResolution {
    let (lines, unparseable) = labeled_lines(llm_output);
    let mut labels = vec![TypedLabel::NONE; input_tokens.len()];
    let mut aligner = Aligner::new(input_tokens);
    let mut diagnostics = Diagnostics::new()
        .with("unparseable_lines", unparseable)
        .with("misaligned", 0)
        .with("out_of_space_labels", 0);
    for (span, label) in lines {
        let kind = map_label(&label);
        if kind.is_none() && !label.trim().eq_ignore_ascii_case("none") {
            diagnostics.bump("out_of_space_labels");
        }
        match aligner.align(&span) {
            Some(range) => labels[range].iter_mut().for_each(|l| *l = TypedLabel(kind)),
            None => diagnostics.bump("misaligned"),
        }
    }
    TypedResolution {
        labels,
        diagnostics,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioResolution {
    pub tags: Vec<BioTag>,
    pub diagnostics: Diagnostics,
}

/// Phrase-level labels in BIO. Phrases align contiguously; the first token
/// gets `B-type`, the rest `I-type`. Unaligned phrases are skipped.
pub fn resolve_med_attr_phrase(llm_output: &str, input_tokens: &[Token]) -> BioResolution {
    let (lines, unparseable) = labeled_lines(llm_output);
    let mut tags = vec![BioTag::Outside; input_tokens.len()];
    let mut aligner = Aligner::new(input_tokens);
    let mut diagnostics = Diagnostics::new()
        .with("unparseable_lines", unparseable)
        .with("misaligned", 0)
        .with("out_of_space_labels", 0);
    for (span, label) in lines {
        let kind = map_label(&label);
        if kind.is_none() && !label.trim().eq_ignore_ascii_case("none") {
            diagnostics.bump("out_of_space_labels");
        }
        let Some(range) = aligner.align(&span) else {
            diagnostics.bump("misaligned");
            continue;
        };
        if let Some(k) = kind {
            let first = range.start;
            for i in range {
                tags[i] = if i == first { BioTag::Begin(k) } else { BioTag::Inside(k) };
            }
        }
    }
    BioResolution { tags, diagnostics }
}

static KEY_VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?P<key>[A-Za-z_]+)\s*:\s*"(?P<value>[^"]*)""#).unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationResolution {
    pub records: Vec<MedRecord>,
    pub diagnostics: Diagnostics,
}

/// One record per line of `medication: "X", dosage: "Y", ...` pairs; every
/// attribute on a line belongs to that line's medication.
pub fn resolve_med_attr_relations(llm_output: &str) -> RelationResolution {
    let mut records = Vec::new();
    let mut diagnostics = Diagnostics::new()
        .with("unknown_keys", 0)
        .with("skipped_lines", 0);
    for line in llm_output.lines().filter(|l| !l.trim().is_empty()) {
        let mut med: Option<String> = None;
        let mut attrs = Vec::new();
        for c in KEY_VALUE.captures_iter(line) {
            let value = c["value"].trim();
            match c["key"].parse::<AttrKind>() {
                Ok(AttrKind::Medication) if med.is_none() => {
                    if !value.is_empty() {
                        med = Some(value.to_string());
                    }
                }
                Ok(AttrKind::Medication) => diagnostics.bump("unknown_keys"),
                Ok(k) => attrs.push((k, value.to_string())),
                Err(_) => diagnostics.bump("unknown_keys"),
            }
        }
        let Some(med) = med else {
            diagnostics.bump("skipped_lines");
            continue;
        };
        let mut record = MedRecord::new(med);
        for (k, v) in attrs {
            record.push(k, v);
        }
        records.push(record);
    }
    RelationResolution {
        records,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::first_bio_violation;

    const A5: &str = "8. Albuterol 2 puffs every 4-6 hours as needed. HOSPITAL COURSE: This is an 80-year-old female who was hospitalized about 2 months ago for chronic obstructive pulmonary disease exacerbation.";

    #[test]
    fn token_level_prefix() {
        let toks = tokenize(A5);
        let out = "-\"8\": none\n-\".\": none\n-\"Albuterol\": medication\n-\"2\": dosage\n-\"puffs\": dosage\n-\"every\": frequency\n-\"4-6\": frequency\n-\"hours\": frequency\n-\"as\": Instructions";
        let r = resolve_med_attr_token(out, &toks);
        let got: Vec<String> = r.labels.iter().take(9).map(|l| l.to_string()).collect();
        assert_eq!(
            got,
            ["none", "none", "medication", "dosage", "dosage", "frequency", "frequency", "frequency", "none"]
        );
        assert_eq!(r.diagnostics.get("out_of_space_labels"), 1);
        assert!(r.labels[9..].iter().all(|l| *l == TypedLabel::NONE));
    }

    #[test]
    fn token_level_cursor_handles_repeats() {
        let toks = tokenize(A5);
        let r = resolve_med_attr_token("-\"2\": dosage\n-\"2\": duration\n-\"months\": duration", &toks);
        let two_months = toks.iter().position(|t| t.surface == "months").unwrap();
        assert_eq!(r.labels[3], TypedLabel(Some(AttrKind::Dosage)));
        assert_eq!(r.labels[two_months - 1], TypedLabel(Some(AttrKind::Duration)));
        assert_eq!(r.labels[two_months], TypedLabel(Some(AttrKind::Duration)));
    }

    #[test]
    fn phrase_level() {
        let toks = tokenize(A5);
        let r = resolve_med_attr_phrase("-\"Albuterol\": medication\n-\"2 puffs\": dosage\n-\"every 4-6 hours\": frequency", &toks);
        use AttrKind::*;
        assert_eq!(
            &r.tags[2..8],
            &[
                BioTag::Begin(Medication),
                BioTag::Begin(Dosage),
                BioTag::Inside(Dosage),
                BioTag::Begin(Frequency),
                BioTag::Inside(Frequency),
                BioTag::Inside(Frequency)
            ]
        );
        assert_eq!(first_bio_violation(&r.tags), None);
    }

    #[test]
    fn adjacent_same_type_phrases_do_not_merge() {
        let toks = tokenize("take 2 puffs 3 puffs");
        let r = resolve_med_attr_phrase("-\"2 puffs\": dosage\n-\"3 puffs\": dosage", &toks);
        use AttrKind::Dosage;
        assert_eq!(
            r.tags,
            [BioTag::Outside, BioTag::Begin(Dosage), BioTag::Inside(Dosage), BioTag::Begin(Dosage), BioTag::Inside(Dosage)]
        );
    }

    #[test]
    fn phrase_not_found_is_counted() {
        let toks = tokenize(A5);
        let r = resolve_med_attr_phrase("-\"puffs 2\": dosage", &toks);
        assert_eq!(r.diagnostics.get("misaligned"), 1);
        assert!(r.tags.iter().all(|t| *t == BioTag::Outside));
    }

    #[test]
    fn relation_transcript_line() {
        let r = resolve_med_attr_relations(
            "-\"medication: \"Albuterol\", dosage: \"2 puffs\", frequency: \"every 4-6 hours\", duration: \"as needed\"\n-medication: \"prednisone\", duration: \"2 months\"",
        );
        assert_eq!(r.records.len(), 2);
        let a = &r.records[0];
        assert_eq!(a.medication, "Albuterol");
        assert_eq!(a.dosage.as_deref().unwrap(), ["2 puffs"]);
        assert_eq!(a.frequency.as_deref().unwrap(), ["every 4-6 hours"]);
        assert_eq!(a.duration.as_deref().unwrap(), ["as needed"]);
        assert_eq!(a.route, None);
    }

    #[test]
    fn relation_framing_keys_are_case_insensitive() {
        let r = resolve_med_attr_relations("Medication: \"Tylenol\", Frequency: \"twice daily\".");
        let mut want = MedRecord::new("Tylenol");
        want.push(AttrKind::Frequency, "twice daily");
        assert_eq!(r.records, [want]);
    }

    #[test]
    fn relation_skips_lines_without_medication() {
        let r = resolve_med_attr_relations("-dosage: \"5 mg\"\n-medication: \"x\", instructions: \"with food\"");
        assert_eq!(r.records, [MedRecord::new("x")]);
        assert_eq!(r.diagnostics.get("skipped_lines"), 1);
        assert_eq!(r.diagnostics.get("unknown_keys"), 1);
    }
}
