//! Sentence segmentation and n-gram overlap checks.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

/// Honorifics and ranks that precede a name; a period after them never ends
/// a sentence.
const TITLES: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "mt", "gen", "col", "lt", "sgt", "capt", "cpt", "gov",
    "sen", "rep", "rev", "hon", "pres", "fr", "adm", "maj", "cmdr", "supt", "messrs",
];

/// Month abbreviations; no boundary when a number follows.
const MONTHS: &[&str] = &[
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

/// Abbreviations that can legitimately close a sentence. Split only when the
/// next word is a typical sentence opener.
const SUFFIXES: &[&str] = &[
    "jr", "sr", "inc", "ltd", "co", "corp", "bros", "etc", "vs", "no", "esq", "approx", "ca",
];

const STARTERS: &[&str] = &[
    "he", "she", "it", "they", "we", "the", "this", "that", "these", "those", "his", "her",
    "its", "their", "in", "on", "at", "after", "before", "during", "later", "then", "however",
    "a", "an", "there", "when", "while", "although", "as", "by", "from", "since", "following",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '”' | '’' | ')' | ']' | '»')
}

fn strip_openers(word: &str) -> &str {
    word.trim_start_matches(['"', '\'', '“', '‘', '(', '[', '«'])
}

fn is_initial(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

fn is_starter(word: &str) -> bool {
    let w = strip_openers(word);
    if !w.starts_with(char::is_uppercase) {
        return false;
    }
    let core: String = w.chars().take_while(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect();
    STARTERS.contains(&core.as_str())
}

fn is_capitalized_word(word: &str) -> bool {
    let w = strip_openers(word);
    let mut chars = w.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => chars.next().is_some_and(|c| c.is_alphabetic()),
        _ => false,
    }
}

/// Whitespace-delimited tokens starting at `from`.
fn tokens_from(text: &str, from: usize) -> impl Iterator<Item = &str> {
    text[from..].split_whitespace()
}

/// Decides whether a `.` closing `word` ends the sentence, given the tokens
/// that follow it.
fn period_ends_sentence<'a>(word: &str, mut rest: impl Iterator<Item = &'a str>) -> bool {
    let next = match rest.next() {
        Some(n) => n,
        None => return true,
    };
    let word = strip_openers(word);
    let lower: String = word.chars().flat_map(char::to_lowercase).collect();
    let next_first = strip_openers(next).chars().next();
    let next_lower = next_first.is_some_and(char::is_lowercase);

    let single_upper = {
        let mut c = word.chars();
        matches!((c.next(), c.next()), (Some(ch), None) if ch.is_uppercase())
    };
    if single_upper {
        if is_starter(next) && !is_initial(next) {
            return true;
        }
        // Follow a chain of initials: "J. F. Kennedy" vs "A. B. C."
        let mut tok = next;
        loop {
            if is_initial(tok) {
                match rest.next() {
                    Some(t) => tok = t,
                    None => return true,
                }
            } else {
                return !is_capitalized_word(tok) && !next_lower;
            }
        }
    }
    if word.contains('.') {
        // Dotted acronym such as "U.S" or "e.g".
        return is_starter(next);
    }
    if TITLES.contains(&lower.as_str()) {
        return false;
    }
    if MONTHS.contains(&lower.as_str()) && next_first.is_some_and(|c| c.is_ascii_digit()) {
        return false;
    }
    if SUFFIXES.contains(&lower.as_str()) {
        return is_starter(next);
    }
    !next_lower
}

/// Byte offsets where a new sentence starts (excluding 0).
fn boundaries(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c == '\n' {
            // Blank line: paragraph break.
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b' ' | b'\t' | b'\r') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'\n' {
                let start = skip_ws(text, j);
                if start < text.len() && !text[..i].trim().is_empty() {
                    push_boundary(&mut out, text, i);
                }
            }
            continue;
        }
        if !is_terminator(c) {
            continue;
        }
        let run_start = i;
        let mut end = i + c.len_utf8();
        let mut only_period = c == '.';
        while let Some(&(j, d)) = iter.peek() {
            if is_terminator(d) {
                only_period &= false;
                end = j + d.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        while let Some(&(j, d)) = iter.peek() {
            if is_closer(d) {
                end = j + d.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        if end >= text.len() {
            break;
        }
        if !text[end..].starts_with(char::is_whitespace) {
            continue;
        }
        let next_start = skip_ws(text, end);
        if next_start >= text.len() {
            break;
        }
        let ends = if only_period {
            let word = text[..run_start].rsplit(char::is_whitespace).next().unwrap_or("");
            if word.is_empty() {
                !text[next_start..].starts_with(char::is_lowercase)
            } else {
                period_ends_sentence(word, tokens_from(text, next_start))
            }
        } else {
            !strip_openers(&text[next_start..]).starts_with(char::is_lowercase)
        };
        if ends {
            push_boundary(&mut out, text, end);
        }
    }
    out
}

fn skip_ws(text: &str, from: usize) -> usize {
    from + (text[from..].len() - text[from..].trim_start().len())
}

fn push_boundary(out: &mut Vec<usize>, text: &str, at: usize) {
    if text[..at].trim().is_empty() {
        return;
    }
    if out.last().is_none_or(|&last| last < at && !text[last..at].trim().is_empty()) {
        out.push(at);
    }
}

/// Splits `text` into contiguous pieces whose concatenation is exactly
/// `text`. Each piece holds one sentence; the whitespace separating two
/// sentences is carried at the start of the following piece.
pub fn sentence_pieces(text: &str) -> Vec<Range<usize>> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    for b in boundaries(text) {
        pieces.push(start..b);
        start = b;
    }
    pieces.push(start..text.len());
    pieces
}

/// Trimmed sentences of `text`.
pub fn sentences(text: &str) -> Vec<&str> {
    sentence_pieces(text).into_iter().map(|r| text[r].trim()).collect()
}

/// Joins whitespace-separated tokens with single spaces.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, tok) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

fn ngrams<'a>(tokens: &[&'a str], n: usize) -> BTreeSet<Vec<&'a str>> {
    if n == 0 || tokens.len() < n {
        return BTreeSet::new();
    }
    tokens.windows(n).map(|w| w.to_vec()).collect()
}

/// Every whitespace-normalized `n`-gram of `source` that also occurs in
/// `target`.
pub fn shared_ngrams(source: &str, target: &str, n: usize) -> Vec<String> {
    let src: Vec<&str> = source.split_whitespace().collect();
    let tgt: Vec<&str> = target.split_whitespace().collect();
    let grams = ngrams(&src, n);
    if grams.is_empty() || tgt.len() < n {
        return Vec::new();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in tgt.windows(n) {
        if grams.contains(w) && seen.insert(w.to_vec()) {
            out.push(w.join(" "));
        }
    }
    out
}

/// True when some `n`-gram of `source` appears verbatim (modulo
/// whitespace) in `target`.
pub fn contains_ngram_of(source: &str, target: &str, n: usize) -> bool {
    !shared_ngrams(source, target, n).is_empty()
}
