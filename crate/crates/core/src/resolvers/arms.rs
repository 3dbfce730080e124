use std::sync::LazyLock;

use regex::Regex;

static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•–]|\d+[.)](?:\s+|$))\s*").unwrap());

/// Strips one leading bullet (`-`, `*`, `•`, or `N.` / `N)`) and the
/// surrounding whitespace.
pub fn strip_bullet(line: &str) -> &str {
    match BULLET.find(line) {
        Some(m) => line[m.end()..].trim(),
        None => line.trim(),
    }
}

/// One arm per non-empty output line.
pub fn resolve_arms(llm_output: &str) -> Vec<String> {
    llm_output
        .lines()
        .map(strip_bullet)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
