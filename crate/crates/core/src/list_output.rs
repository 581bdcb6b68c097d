//! Parsing of list-shaped model output.
//!
//! Prompts ask for a numbered list, one item per line, or the literal token
//! `none`. The parser is forgiving: numbered (`1.`, `2)`, `3:`) and bulleted
//! (`-`, `*`, `•`) lines are accepted, anything else on a line is ignored.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Sentinel the model emits when it has nothing to offer.
pub const NONE_SENTINEL: &str = "none";

fn strip_marker(line: &str) -> Option<&str> {
    let line = line.trim();
    if let Some(rest) = line
        .strip_prefix('-')
        .or_else(|| line.strip_prefix('*'))
        .or_else(|| line.strip_prefix('•'))
    {
        return (rest.is_empty() || rest.starts_with(char::is_whitespace)).then(|| rest.trim());
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest
        .strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    (rest.is_empty() || rest.starts_with(char::is_whitespace)).then(|| rest.trim())
}

fn is_none(text: &str) -> bool {
    let t = text.trim().trim_end_matches('.');
    t.eq_ignore_ascii_case(NONE_SENTINEL)
}

/// Extracts at most `limit` non-empty list items. `Some(vec![])` means the
/// model answered with the `none` sentinel; `None` means the output had no
/// recognizable list at all.
pub fn parse_list(text: &str, limit: usize) -> Option<Vec<String>> {
    if is_none(text) {
        return Some(Vec::new());
    }
    let mut saw_marker = false;
    let mut items = Vec::new();
    for line in text.lines() {
        let Some(item) = strip_marker(line) else { continue };
        saw_marker = true;
        let item = item.trim_matches('"').trim();
        if item.is_empty() || is_none(item) {
            continue;
        }
        if items.len() < limit {
            items.push(item.to_string());
        }
    }
    saw_marker.then_some(items)
}

/// Leading decimal integer of `item`, ignoring surrounding brackets.
pub fn leading_integer(item: &str) -> Option<usize> {
    let t = item.trim().trim_start_matches(['[', '(', '#']);
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    t[..digits].parse().ok()
}

/// Splits an item like `Q0003, Q0017; [Q0042]` into bare identifiers.
pub fn split_ids(item: &str) -> Vec<&str> {
    item.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .map(|t| t.trim_matches(|c: char| matches!(c, '[' | ']' | '(' | ')' | '.' | '"')))
        .filter(|t| !t.is_empty())
        .collect()
}
