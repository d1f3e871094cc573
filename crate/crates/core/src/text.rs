//! Small text helpers shared by the embedder, the fuzzy matcher, the profile
//! token budget and the scripted oracles.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Lowercases and collapses every whitespace run into a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Lowercased alphanumeric tokens, in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// Whitespace-separated word count; the unit of every profile token budget.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Levenshtein edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max_len` on normalized text. Two empty strings are identical.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let a = normalize(a);
    let b = normalize(b);
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / len as f64
}

/// True when every token of `needle` appears among the tokens of `haystack`.
pub fn contains_all_tokens(haystack: &str, needle: &str) -> bool {
    let hay = tokens(haystack);
    let want = tokens(needle);
    !want.is_empty() && want.iter().all(|w| hay.contains(w))
}

/// Replaces every `{name}` placeholder with its value from `values`.
/// Unknown placeholders are left untouched.
pub fn fill_placeholders(template: &str, values: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match values.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Names of the `{name}` placeholders in `template`, in order, deduplicated.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = after[..close].to_string();
        if !name.is_empty() && !names.contains(&name) {
            names.push(name);
        }
        rest = &after[close + 1..];
    }
    names
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// A literal-with-holes pattern such as `query {item} price on {shop}`.
///
/// Literals match ASCII case-insensitively; captures keep the original text.
/// Trailing `.`, `?` and `!` on the input are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPattern {
    source: String,
    segments: Vec<Segment>,
}

impl TextPattern {
    pub fn new(pattern: &str) -> Self {
        let mut segments = Vec::new();
        let mut rest = pattern;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    segments.push(Segment::Slot(after[..close].to_string()));
                    rest = &after[close + 1..];
                }
                None => {
                    segments.push(Segment::Literal(rest[open..].to_string()));
                    rest = "";
                }
            }
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }
        Self {
            source: pattern.to_string(),
            segments,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn slot_names(&self) -> Vec<String> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.clone()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Captures for every slot, or `None` when the whole input does not match.
    pub fn captures(&self, text: &str) -> Option<BTreeMap<String, String>> {
        let text = text.trim().trim_end_matches(['.', '?', '!']).trim_end();
        let mut out = BTreeMap::new();
        if self.match_from(0, text, &mut out) {
            Some(out)
        } else {
            None
        }
    }

    fn match_from(&self, seg: usize, text: &str, out: &mut BTreeMap<String, String>) -> bool {
        let Some(segment) = self.segments.get(seg) else {
            return text.is_empty();
        };
        match segment {
            Segment::Literal(lit) => {
                let n = lit.len();
                if text.len() >= n
                    && text.is_char_boundary(n)
                    && text[..n].eq_ignore_ascii_case(lit)
                {
                    self.match_from(seg + 1, &text[n..], out)
                } else {
                    false
                }
            }
            Segment::Slot(name) => {
                let next_literal = match self.segments.get(seg + 1) {
                    None => {
                        let value = text.trim();
                        if value.is_empty() {
                            return false;
                        }
                        out.insert(name.clone(), value.to_string());
                        return true;
                    }
                    Some(Segment::Literal(l)) => l,
                    // Two adjacent slots are ambiguous; never matches.
                    Some(Segment::Slot(_)) => return false,
                };
                let lower = text.to_ascii_lowercase();
                let needle = next_literal.to_ascii_lowercase();
                let mut from = 1;
                while from <= lower.len() {
                    let Some(rel) = lower.get(from..).and_then(|s| s.find(&needle)) else {
                        break;
                    };
                    let at = from + rel;
                    let value = text[..at].trim();
                    if !value.is_empty() {
                        let mut trial = out.clone();
                        trial.insert(name.clone(), value.to_string());
                        if self.match_from(seg + 1, &text[at..], &mut trial) {
                            *out = trial;
                            return true;
                        }
                    }
                    from = at + 1;
                    while from < lower.len() && !lower.is_char_boundary(from) {
                        from += 1;
                    }
                }
                false
            }
        }
    }
}
