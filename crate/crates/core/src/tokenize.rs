//! Fixed-rule tokenizer.
//!
//! Text is split on Unicode whitespace, then any leading or trailing
//! characters from [`EDGE_PUNCT`] are peeled off one at a time into their own
//! tokens. Punctuation inside a word is kept, so `4-6`, `q.d` and
//! `80-year-old` stay whole. Offsets are byte offsets into the input.

use serde::{Deserialize, Serialize};

/// Characters split off the edges of a whitespace-delimited chunk.
pub const EDGE_PUNCT: &[char] = &['.', ',', ';', ':', '(', ')', '[', ']', '"', '\'', '!', '?'];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn folded(&self) -> String {
        self.surface.to_lowercase()
    }

    pub fn is_punct(&self) -> bool {
        self.surface.chars().all(|c| !c.is_alphanumeric())
    }
}

fn is_edge_punct(c: char) -> bool {
    EDGE_PUNCT.contains(&c)
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        split_chunk(text, s, text.len(), &mut out);
    }
    out
}

fn split_chunk(text: &str, mut start: usize, mut end: usize, out: &mut Vec<Token>) {
    let push = |out: &mut Vec<Token>, s: usize, e: usize| {
        out.push(Token {
            surface: text[s..e].to_string(),
            start: s,
            end: e,
        })
    };
    // leading
    while start < end {
        let c = text[start..end].chars().next().unwrap();
        if !is_edge_punct(c) {
            break;
        }
        push(out, start, start + c.len_utf8());
        start += c.len_utf8();
    }
    // trailing, collected in reverse
    let mut tail = Vec::new();
    while start < end {
        let c = text[start..end].chars().next_back().unwrap();
        if !is_edge_punct(c) {
            break;
        }
        tail.push((end - c.len_utf8(), end));
        end -= c.len_utf8();
    }
    if start < end {
        push(out, start, end);
    }
    for (s, e) in tail.into_iter().rev() {
        push(out, s, e);
    }
}

/// Case-folded surfaces.
pub fn folded_surfaces(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(Token::folded).collect()
}

/// First position `>= from` where `needle` occurs contiguously in `hay`.
pub fn find_subsequence<T: PartialEq>(hay: &[T], needle: &[T], from: usize) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}
