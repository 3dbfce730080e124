//! Medication + status list parsing, guided and unguided.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::model::{Diagnostics, MedStatus, Snippet, Status};
use crate::tokenize::{tokenize, Token};

use super::stopwords::is_stopword;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedStatusResolution {
    pub meds: Vec<MedStatus>,
    pub diagnostics: Diagnostics,
}

static GUIDED_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^\s*[-*•]?\s*"?(?P<name>[^"()]*?)"?\s*\((?P<status>[^)]*)\)\s*[.,]?\s*$"#).unwrap()
});

fn dedup(meds: Vec<MedStatus>) -> Vec<MedStatus> {
    let mut seen = HashSet::new();
    meds.into_iter()
        .filter(|m| seen.insert(m.name.to_lowercase()))
        .collect()
}

/// Parses `-"NAME" (STATUS)` lines. Lines that do not match, or carry a
/// status outside the closed set, are skipped and counted.
pub fn resolve_med_status_guided(llm_output: &str) -> MedStatusResolution {
    let mut meds = Vec::new();
    let mut diagnostics = Diagnostics::new();
    diagnostics.set("unparseable_lines", 0);
    for line in llm_output.lines().filter(|l| !l.trim().is_empty()) {
        let parsed = GUIDED_LINE.captures(line).and_then(|c| {
            let name = c["name"].trim();
            let status: Status = c["status"].parse().ok()?;
            (!name.is_empty()).then(|| MedStatus::new(name, status))
        });
        match parsed {
            Some(m) => meds.push(m),
            None => diagnostics.bump("unparseable_lines"),
        }
    }
    let before = meds.len();
    let meds = dedup(meds);
    diagnostics.set("duplicates", before - meds.len());
    MedStatusResolution { meds, diagnostics }
}

static ITEM_BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)](?:\s+|$))\s*").unwrap());
static NAME_COLON_STATUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?P<name>.+?)\s*[:\-–]\s*(?P<status>active|discontinued|neither)\s*\.?$").unwrap());
static NAME_PAREN_STATUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?P<name>.+?)\s*\(\s*(?P<status>active|discontinued|neither)\s*\)\s*\.?$").unwrap());
static GROUP_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?P<status>active|discontinued|neither)(?:\s+medications?)?\s*:\s*(?P<rest>.*)$").unwrap());

/// Dosage and route phrases removed from candidate names.
static DOSAGE_ROUTE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
        \b\d+(?:[.,]\d+)?\s*(?:mg|mcg|g|ml|units?)\b
        | (?:^|\s)p\.?o\.?(?:\s|$)
        | \b(?:iv|patch(?:es)?|puffs?|tablets?|tabs?|capsules?|sublingual|subcutaneous|inhaler)\b
        ",
    )
    .unwrap()
});

/// Removes dosage/route phrases; whitespace collapsed.
pub fn strip_dosage_route(name: &str) -> String {
    let stripped = DOSAGE_ROUTE.replace_all(name, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct InputIndex<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    folded: Vec<String>,
    vocab: HashSet<String>,
}

impl<'a> InputIndex<'a> {
    fn new(text: &'a str) -> Self {
        let tokens = tokenize(text);
        let folded: Vec<String> = tokens.iter().map(Token::folded).collect();
        let vocab = folded.iter().cloned().collect();
        Self {
            text,
            tokens,
            folded,
            vocab,
        }
    }

    /// Keeps name tokens found in the input, then returns the input slice of
    /// the longest run of kept tokens that also occurs contiguously in the
    /// input.
    fn ground(&self, name: &str) -> Option<String> {
        let kept: Vec<String> = tokenize(name)
            .iter()
            .map(Token::folded)
            .filter(|f| self.vocab.contains(f))
            .collect();
        let mut best: Option<(usize, usize)> = None; // (len, input start)
        for i in 0..kept.len() {
            for j in 0..self.folded.len() {
                let mut len = 0;
                while i + len < kept.len()
                    && j + len < self.folded.len()
                    && kept[i + len] == self.folded[j + len]
                {
                    len += 1;
                }
                // trim edge punctuation
                let mut s = j;
                let mut e = j + len;
                while s < e && self.tokens[s].is_punct() {
                    s += 1;
                }
                while e > s && self.tokens[e - 1].is_punct() {
                    e -= 1;
                }
                if e > s && best.is_none_or(|(bl, _)| e - s > bl) {
                    best = Some((e - s, s));
                }
            }
        }
        best.map(|(len, s)| self.text[self.tokens[s].start..self.tokens[s + len - 1].end].to_string())
    }
}

fn mostly_noise(name: &str) -> bool {
    let total = name.chars().count();
    let noise = name
        .chars()
        .filter(|c| c.is_whitespace() || !c.is_alphanumeric())
        .count();
    let all_stop = tokenize(name)
        .iter()
        .filter(|t| !t.is_punct())
        .all(|t| is_stopword(&t.folded()));
    total == 0 || noise * 2 > total || all_stop
}

/// Parses free-form answers in `Med: Status`, `Med (Status)`, and grouped
/// `Status: med1, med2` shapes, then denoises each name against the
/// snippet. Every emitted name is a slice of `snippet.text`.
pub fn resolve_med_status_unguided(llm_output: &str, snippet: &Snippet) -> MedStatusResolution {
    let mut diagnostics = Diagnostics::new();
    for key in ["unparsed_items", "dropped_not_in_input", "dropped_noise"] {
        diagnostics.set(key, 0);
    }
    let flat = llm_output.replace(['\n', '\r'], ",");
    let mut raw: Vec<(String, Status)> = Vec::new();
    let mut group: Option<Status> = None;
    for item in flat.split(',') {
        let item = match ITEM_BULLET.find(item) {
            Some(m) => item[m.end()..].trim(),
            None => item.trim(),
        };
        if item.is_empty() {
            continue;
        }
        let item = item.trim_matches('"');
        if let Some(c) = GROUP_HEADER.captures(item) {
            group = c["status"].parse().ok();
            let rest = c["rest"].trim();
            if !rest.is_empty() {
                if let Some(s) = group {
                    raw.push((rest.to_string(), s));
                }
            }
            continue;
        }
        let explicit = NAME_PAREN_STATUS
            .captures(item)
            .or_else(|| NAME_COLON_STATUS.captures(item));
        match (explicit, group) {
            (Some(c), _) => raw.push((c["name"].to_string(), c["status"].parse().unwrap())),
            (None, Some(s)) => raw.push((item.to_string(), s)),
            (None, None) => diagnostics.bump("unparsed_items"),
        }
    }

    let index = InputIndex::new(&snippet.text);
    let mut meds = Vec::new();
    for (name, status) in raw {
        let name = strip_dosage_route(name.trim_matches(|c: char| c == '"' || c.is_whitespace()));
        match index.ground(&name) {
            None => diagnostics.bump("dropped_not_in_input"),
            Some(g) if mostly_noise(&g) => diagnostics.bump("dropped_noise"),
            Some(g) => meds.push(MedStatus::new(g, status)),
        }
    }
    let before = meds.len();
    let meds = dedup(meds);
    diagnostics.set("duplicates", before - meds.len());
    MedStatusResolution { meds, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A4: &str = "[...] home dose of Kadian as this is her long-acting medication and DC the continuous Dilaudid given IV. 5. Urinary tract infection with Klebsiella and E. coli, both sensitive to Levaquin. Since this was diagnosed Foley has been DC'd. For now would continue Levaquin and recheck urinalysis.";

    fn pairs(r: &MedStatusResolution) -> Vec<(&str, Status)> {
        r.meds.iter().map(|m| (m.name.as_str(), m.status)).collect()
    }

    #[test]
    fn guided_transcript() {
        let r = resolve_med_status_guided("-\"Kadian\" (active)\n-\"Dilaudid\" (discontinued)\n-\"Levaquin\" (active)");
        assert_eq!(
            pairs(&r),
            [
                ("Kadian", Status::Active),
                ("Dilaudid", Status::Discontinued),
                ("Levaquin", Status::Active)
            ]
        );
        assert_eq!(r.diagnostics.get("unparseable_lines"), 0);
    }

    #[test]
    fn guided_skips_unknown_status_and_dedups() {
        let r = resolve_med_status_guided("-\"Kadian\" (on hold)\n-\"Levaquin\" (Active)\n-\"levaquin\" (discontinued)\nnoise");
        assert_eq!(pairs(&r), [("Levaquin", Status::Active)]);
        assert_eq!(r.diagnostics.get("unparseable_lines"), 2);
        assert_eq!(r.diagnostics.get("duplicates"), 1);
    }

    #[test]
    fn guided_tolerates_missing_quotes() {
        let r = resolve_med_status_guided("- Inderal LA (active)");
        assert_eq!(pairs(&r), [("Inderal LA", Status::Active)]);
    }

    #[test]
    fn unguided_grouped_format() {
        let s = Snippet::new("a4", A4, None).unwrap();
        let r = resolve_med_status_unguided("Active: Kadian, Levaquin, Discontinued: Dilaudid", &s);
        assert_eq!(
            pairs(&r),
            [
                ("Kadian", Status::Active),
                ("Levaquin", Status::Active),
                ("Dilaudid", Status::Discontinued)
            ]
        );
    }

    #[test]
    fn unguided_newline_and_paren_formats() {
        let s = Snippet::new("a4", A4, None).unwrap();
        let r = resolve_med_status_unguided("- Kadian (active)\n- Dilaudid: discontinued\n- Levaquin (Active)", &s);
        assert_eq!(r.meds.len(), 3);
        assert_eq!(r.meds[1].status, Status::Discontinued);
    }

    #[test]
    fn unguided_strips_dosage_and_route() {
        let s = Snippet::new("x", "start her on Ativan 1 mg p.o. q. 8 hours", None).unwrap();
        let r = resolve_med_status_unguided("Ativan 1 mg IV: active", &s);
        assert_eq!(pairs(&r), [("Ativan", Status::Active)]);
        assert_eq!(strip_dosage_route("Ativan 1 mg IV"), "Ativan");
        assert_eq!(strip_dosage_route("Lexapro 2 mg p.o."), "Lexapro");
    }

    #[test]
    fn unguided_drops_hallucinations_and_noise() {
        let s = Snippet::new("a4", A4, None).unwrap();
        let r = resolve_med_status_unguided("Metformin: active\nthe: active\nKadian: active", &s);
        assert_eq!(pairs(&r), [("Kadian", Status::Active)]);
        assert_eq!(r.diagnostics.get("dropped_not_in_input"), 1);
        assert_eq!(r.diagnostics.get("dropped_noise"), 1);
    }

    #[test]
    fn unguided_group_header_on_its_own_line() {
        let s = Snippet::new("a4", A4, None).unwrap();
        let r = resolve_med_status_unguided("Active:\n- Kadian\n- Levaquin\nDiscontinued:\n- Dilaudid", &s);
        assert_eq!(r.meds.len(), 3);
        assert_eq!(r.meds[2], MedStatus::new("Dilaudid", Status::Discontinued));
    }
}
