//! Description complexity and trivial-pattern detection on judge bullets.

use serde::{Deserialize, Serialize};

/// Number of maximal letter runs plus maximal digit runs; everything else
/// separates. `"* copy <image2>"` has three: `copy`, `image`, `2`.
pub fn count_words(text: &str) -> usize {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        Gap,
        Letters,
        Digits,
    }
    let mut count = 0;
    let mut prev = Run::Gap;
    for c in text.chars() {
        let cur = if c.is_alphabetic() {
            Run::Letters
        } else if c.is_numeric() {
            Run::Digits
        } else {
            Run::Gap
        };
        if cur != Run::Gap && cur != prev {
            count += 1;
        }
        prev = cur;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Copy,
    Insertion,
    Split,
    None,
}

/// Lower-cased bullet bodies with markers stripped; blank lines dropped.
fn bullets(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| matches!(c, '*' | '•' | '-' | '–' | '—') || c.is_whitespace())
                .trim()
                .to_lowercase()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Letter and digit runs, as counted by [`count_words`].
fn tokens(bullet: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut prev: Option<bool> = None;
    for c in bullet.chars() {
        let kind = if c.is_alphabetic() {
            Some(true)
        } else if c.is_numeric() {
            Some(false)
        } else {
            None
        };
        match kind {
            Some(k) if prev == Some(k) => out.last_mut().expect("run in progress").push(c),
            Some(_) => out.push(c.to_string()),
            None => {}
        }
        prev = kind;
    }
    out
}

const SPLIT_PHRASES: [&str; 5] = [
    "copy entire grid",
    "copy the entire grid",
    "side by side",
    "side-by-side",
    "next to each other",
];

fn is_split(bullet: &str) -> bool {
    SPLIT_PHRASES.iter().any(|p| bullet.contains(p))
}

/// `copy <imageN>`, `copy imageN`, `copy the image N`.
fn is_copy(bullet: &str) -> bool {
    let t = tokens(bullet);
    let t: Vec<&str> = t.iter().map(String::as_str).filter(|w| *w != "the").collect();
    matches!(t.as_slice(), ["copy", "image", n] if n.chars().all(|c| c.is_ascii_digit()))
}

const INSERT_VERBS: [&str; 6] = ["place", "insert", "extract", "put", "paste", "add"];

fn is_transformation(word: &str) -> bool {
    matches!(word, "apply" | "applies" | "applied" | "applying" | "merge" | "merges" | "merged" | "merging")
        || word.starts_with("blend")
        || word.starts_with("textur")
        || word.starts_with("transform")
}

/// Verb, then `from`, then `into`/`onto`/`in`/`on`, with an image reference.
fn is_insertion(bullet: &str) -> bool {
    let t = tokens(bullet);
    let Some(verb) = t.iter().position(|w| INSERT_VERBS.contains(&w.as_str())) else {
        return false;
    };
    let Some(from) = t[verb..].iter().position(|w| w == "from").map(|i| i + verb) else {
        return false;
    };
    let target = t[from..].iter().any(|w| matches!(w.as_str(), "into" | "onto" | "in" | "on"));
    target && t.iter().any(|w| w == "image")
}

/// Precedence: split, then copy, then insertion.
pub fn classify_pattern(text: &str) -> Pattern {
    let bullets = bullets(text);
    if bullets.iter().any(|b| is_split(b)) {
        return Pattern::Split;
    }
    if bullets.len() == 1 && is_copy(&bullets[0]) {
        return Pattern::Copy;
    }
    let transforms = bullets.iter().any(|b| tokens(b).iter().any(|w| is_transformation(w)));
    if !transforms && bullets.iter().any(|b| is_insertion(b)) {
        return Pattern::Insertion;
    }
    Pattern::None
}
