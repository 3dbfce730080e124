//! Multiple-choice resolution by longest contiguous character overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseCandidates {
    pub acronym: String,
    pub expansions: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CandidateError {
    #[error("acronym `{0}` has no expansions")]
    Empty(String),
    #[error("acronym `{0}` lists `{1}` twice (case-insensitive)")]
    Duplicate(String, String),
}

impl SenseCandidates {
    pub fn new(acronym: impl Into<String>, expansions: Vec<String>) -> Result<Self, CandidateError> {
        let acronym = acronym.into();
        if expansions.is_empty() {
            return Err(CandidateError::Empty(acronym));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &expansions {
            if !seen.insert(e.to_lowercase()) {
                return Err(CandidateError::Duplicate(acronym, e.clone()));
            }
        }
        Ok(Self {
            acronym,
            expansions,
        })
    }
}

/// Chosen candidate and the overlap length that won it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseChoice {
    pub index: usize,
    pub overlap: usize,
}

fn fold(s: &str) -> Vec<char> {
    s.chars().flat_map(char::to_lowercase).collect()
}

fn lcs_len_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // rolling row of run lengths ending at (i, j)
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Length in characters of the longest common substring after case folding.
pub fn longest_common_substring_len(a: &str, b: &str) -> usize {
    lcs_len_chars(&fold(a), &fold(b))
}

/// Picks the candidate with maximal overlap against `llm_output`; ties go to
/// the lowest index. Never fails for a non-empty candidate list.
pub fn resolve_sense(llm_output: &str, candidates: &SenseCandidates) -> SenseChoice {
    let out = fold(llm_output);
    let mut best = SenseChoice {
        index: 0,
        overlap: 0,
    };
    for (index, cand) in candidates.expansions.iter().enumerate() {
        let overlap = lcs_len_chars(&out, &fold(cand));
        if index == 0 || overlap > best.overlap {
            best = SenseChoice { index, overlap };
        }
    }
    best
}

/// Edit-mode variant: overlap is measured on the region the model changed
/// (see [`edit_region`]), falling back to the whole output.
pub fn resolve_sense_edit(
    original: &str,
    edited: &str,
    candidates: &SenseCandidates,
) -> SenseChoice {
    let region = edit_region(original, edited, &candidates.acronym).unwrap_or(edited);
    resolve_sense(region, candidates)
}

fn words(s: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push((st, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push((st, s.len()));
    }
    out
}

/// A changed hunk: word ranges `[a0, a1)` in the original replaced by
/// `[b0, b1)` in the edited text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hunk {
    a0: usize,
    a1: usize,
    b0: usize,
    b1: usize,
}

fn word_hunks(a: &[&str], b: &[&str]) -> Vec<Hunk> {
    let (n, m) = (a.len(), b.len());
    // suffix LCS table
    let mut t = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if a[i] == b[j] {
                t[i + 1][j + 1] + 1
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    let mut hunks = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut open: Option<(usize, usize)> = None;
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            if let Some((a0, b0)) = open.take() {
                hunks.push(Hunk { a0, a1: i, b0, b1: j });
            }
            i += 1;
            j += 1;
            continue;
        }
        open.get_or_insert((i, j));
        if j < m && (i == n || t[i][j + 1] >= t[i + 1][j]) {
            j += 1;
        } else {
            i += 1;
        }
    }
    if let Some((a0, b0)) = open {
        hunks.push(Hunk { a0, a1: n, b0, b1: m });
    }
    hunks
}

/// The part of `edited` the model rewrote, found by a word-level diff.
///
/// Prefers the hunk whose replaced original words contain `acronym`;
/// otherwise the largest inserted hunk. `None` when nothing was inserted.
pub fn edit_region<'a>(original: &str, edited: &'a str, acronym: &str) -> Option<&'a str> {
    let aw = words(original);
    let bw = words(edited);
    let a: Vec<&str> = aw.iter().map(|&(s, e)| &original[s..e]).collect();
    let b: Vec<&str> = bw.iter().map(|&(s, e)| &edited[s..e]).collect();
    let hunks: Vec<Hunk> = word_hunks(&a, &b)
        .into_iter()
        .filter(|h| h.b1 > h.b0)
        .collect();
    let acr = acronym.to_lowercase();
    let mentions_acronym = |h: &Hunk| {
        !acr.is_empty()
            && a[h.a0..h.a1]
                .iter()
                .any(|w| w.to_lowercase().contains(&acr))
    };
    let span_len = |h: &Hunk| bw[h.b1 - 1].1 - bw[h.b0].0;
    let chosen = hunks
        .iter()
        .find(|h| mentions_acronym(h))
        .or_else(|| hunks.iter().max_by_key(|h| span_len(h)))?;
    Some(&edited[bw[chosen.b0].0..bw[chosen.b1 - 1].1])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over all substring pairs.
    fn brute_lcs(a: &str, b: &str) -> usize {
        let a = fold(a);
        let b = fold(b);
        let mut best = 0;
        for i in 0..a.len() {
            for j in i + 1..=a.len() {
                let sub = &a[i..j];
                if b.windows(sub.len()).any(|w| w == sub) {
                    best = best.max(sub.len());
                }
            }
        }
        best
    }

    fn cands(xs: &[&str]) -> SenseCandidates {
        SenseCandidates::new("X", xs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(longest_common_substring_len("abc", "xyz"), 0);
        assert_eq!(longest_common_substring_len("physical", "physical"), 8);
        assert_eq!(brute_lcs("right atria", "right atrium"), 10);
        assert_eq!(longest_common_substring_len("right atria", "right atrium"), 10);
        assert_eq!(longest_common_substring_len("RIGHT", "right"), 5);
        assert_eq!(longest_common_substring_len("", "abc"), 0);
    }

    #[test]
    fn resolve_examples() {
        let c = cands(&["right atrium", "rheumatoid arthritis"]);
        assert_eq!(resolve_sense("right atria", &c).index, 0);

        let c = cands(&["alpha", "beta", "gamma ray"]);
        let got = resolve_sense("gamma ray", &c);
        assert_eq!(got, SenseChoice { index: 2, overlap: 9 });
    }

    #[test]
    fn four_char_overlap_is_reported() {
        // "xxtherxx" shares "ther" (4) with "therapy" and at most "th"/"r"
        // with the others; confirmed by the brute-force oracle.
        let c = cands(&["prothrombin", "therapy", "posterior"]);
        let out = "xxtherxx";
        let expected: Vec<usize> = c.expansions.iter().map(|e| brute_lcs(out, e)).collect();
        assert_eq!(expected, vec![2, 4, 2]);
        assert_eq!(resolve_sense(out, &c), SenseChoice { index: 1, overlap: 4 });
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = cands(&["abcx", "abcy"]);
        assert_eq!(resolve_sense("abc", &c).index, 0);
        let c = cands(&["zzz", "qqq"]);
        assert_eq!(resolve_sense("abc", &c), SenseChoice { index: 0, overlap: 0 });
    }

    #[test]
    fn candidates_validate() {
        assert!(SenseCandidates::new("PT", vec![]).is_err());
        assert!(SenseCandidates::new("PT", vec!["A".into(), "a".into()]).is_err());
    }

    #[test]
    fn edit_region_finds_expansion() {
        let orig = "LUNGS: CTA, intubated. ABDOMEN: Obese.";
        let edited = "LUNGS: Clear to auscultation, intubated. ABDOMEN: Obese.";
        assert_eq!(edit_region(orig, edited, "CTA"), Some("Clear to auscultation,"));
        assert_eq!(edit_region(orig, orig, "CTA"), None);
    }

    #[test]
    fn edit_region_prefers_acronym_hunk() {
        let orig = "pressure of 47/11, PA pressure of 48/16, saturation of 95";
        let edited = "pressure of 47/11, pulmonary artery pressure of 48/16, saturation of 95%.";
        assert_eq!(edit_region(orig, edited, "PA"), Some("pulmonary artery"));
    }

    #[test]
    fn edit_mode_falls_back_to_whole_output() {
        let c = cands(&["clear to auscultation", "computed tomography angiography"]);
        let got = resolve_sense_edit("same", "same", &c);
        assert_eq!(got.index, 0);
    }
}
