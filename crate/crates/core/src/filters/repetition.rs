//! Duplicate-segment fractions over lines, paragraphs and word n-grams.
//!
//! Line and paragraph fractions count the extra occurrences of a repeated
//! segment (first occurrences are not duplicates). Character fractions for
//! n-grams are measured over the non-whitespace characters of the document's
//! words, with overlapping occurrences counted once.

use std::collections::{BTreeMap, HashMap, HashSet};

pub const DUPLICATE_LINE: &str = "duplicate_line";
pub const DUPLICATE_PARAGRAPH: &str = "duplicate_paragraph";
pub const DUPLICATE_LINE_CHAR: &str = "duplicate_line_char";
pub const DUPLICATE_PARAGRAPH_CHAR: &str = "duplicate_paragraph_char";

pub const TOP_NGRAM_RANGE: std::ops::RangeInclusive<usize> = 2..=4;
pub const DUP_NGRAM_RANGE: std::ops::RangeInclusive<usize> = 5..=10;

pub fn top_ngram_name(n: usize) -> String {
    format!("top_{n}gram")
}

pub fn dup_ngram_name(n: usize) -> String {
    format!("dup_{n}gram")
}

/// Every granularity emitted by [`repetition_fractions`].
pub fn granularities() -> Vec<String> {
    let mut names = vec![
        DUPLICATE_LINE.to_string(),
        DUPLICATE_PARAGRAPH.to_string(),
        DUPLICATE_LINE_CHAR.to_string(),
        DUPLICATE_PARAGRAPH_CHAR.to_string(),
    ];
    names.extend(TOP_NGRAM_RANGE.map(top_ngram_name));
    names.extend(DUP_NGRAM_RANGE.map(dup_ngram_name));
    names
}

/// Gopher's published thresholds.
pub fn gopher_thresholds() -> BTreeMap<String, f64> {
    let mut t = BTreeMap::new();
    t.insert(DUPLICATE_LINE.to_string(), 0.30);
    t.insert(DUPLICATE_PARAGRAPH.to_string(), 0.30);
    t.insert(DUPLICATE_LINE_CHAR.to_string(), 0.20);
    t.insert(DUPLICATE_PARAGRAPH_CHAR.to_string(), 0.20);
    for (n, v) in TOP_NGRAM_RANGE.zip([0.20, 0.18, 0.16]) {
        t.insert(top_ngram_name(n), v);
    }
    for (n, v) in DUP_NGRAM_RANGE.zip([0.15, 0.14, 0.13, 0.12, 0.11, 0.10]) {
        t.insert(dup_ngram_name(n), v);
    }
    t
}

pub fn repetition_fractions(text: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();

    let lines: Vec<&str> = text
        .split('\n')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let (line_frac, line_char_frac) = duplicate_segment_fractions(&lines);
    out.insert(DUPLICATE_LINE.to_string(), line_frac);
    out.insert(DUPLICATE_LINE_CHAR.to_string(), line_char_frac);

    let paragraphs = paragraphs(text);
    let para_refs: Vec<&str> = paragraphs.iter().map(String::as_str).collect();
    let (para_frac, para_char_frac) = duplicate_segment_fractions(&para_refs);
    out.insert(DUPLICATE_PARAGRAPH.to_string(), para_frac);
    out.insert(DUPLICATE_PARAGRAPH_CHAR.to_string(), para_char_frac);

    let words: Vec<&str> = text.split_whitespace().collect();
    let word_chars: Vec<usize> = words.iter().map(|w| w.chars().count()).collect();
    let total_chars: usize = word_chars.iter().sum();

    for n in TOP_NGRAM_RANGE {
        out.insert(top_ngram_name(n), top_ngram_fraction(&words, &word_chars, total_chars, n));
    }
    for n in DUP_NGRAM_RANGE {
        out.insert(dup_ngram_name(n), dup_ngram_fraction(&words, &word_chars, total_chars, n));
    }
    out
}

/// Blank-line separated blocks, each made of its trimmed non-empty lines.
fn paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.split('\n').map(str::trim) {
        if line.is_empty() {
            if !current.is_empty() {
                paras.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paras.push(current.join("\n"));
    }
    paras
}

fn duplicate_segment_fractions(segments: &[&str]) -> (f64, f64) {
    if segments.is_empty() {
        return (0.0, 0.0);
    }
    let mut seen = HashSet::new();
    let mut dup_count = 0usize;
    let mut dup_chars = 0usize;
    let mut total_chars = 0usize;
    for seg in segments {
        let chars = seg.chars().count();
        total_chars += chars;
        if !seen.insert(*seg) {
            dup_count += 1;
            dup_chars += chars;
        }
    }
    let count_frac = dup_count as f64 / segments.len() as f64;
    let char_frac = if total_chars == 0 {
        0.0
    } else {
        dup_chars as f64 / total_chars as f64
    };
    (count_frac, char_frac)
}

fn ngram_positions<'a>(words: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], Vec<usize>> {
    let mut map: HashMap<&[&str], Vec<usize>> = HashMap::new();
    if words.len() >= n {
        for start in 0..=words.len() - n {
            map.entry(&words[start..start + n]).or_default().push(start);
        }
    }
    map
}

fn mark_covered(starts: &[usize], n: usize, covered: &mut [bool]) {
    for &s in starts {
        for flag in &mut covered[s..s + n] {
            *flag = true;
        }
    }
}

fn sum_covered(covered: &[bool], word_chars: &[usize]) -> usize {
    covered
        .iter()
        .zip(word_chars)
        .filter(|(c, _)| **c)
        .map(|(_, w)| *w)
        .sum()
}

fn top_ngram_fraction(words: &[&str], word_chars: &[usize], total_chars: usize, n: usize) -> f64 {
    if total_chars == 0 {
        return 0.0;
    }
    let positions = ngram_positions(words, n);
    let max_count = positions.values().map(Vec::len).max().unwrap_or(0);
    if max_count < 2 {
        return 0.0;
    }
    // Several n-grams may share the top count; report the largest coverage.
    let mut best = 0usize;
    for starts in positions.values().filter(|s| s.len() == max_count) {
        let mut covered = vec![false; words.len()];
        mark_covered(starts, n, &mut covered);
        best = best.max(sum_covered(&covered, word_chars));
    }
    best as f64 / total_chars as f64
}

fn dup_ngram_fraction(words: &[&str], word_chars: &[usize], total_chars: usize, n: usize) -> f64 {
    if total_chars == 0 {
        return 0.0;
    }
    let positions = ngram_positions(words, n);
    let mut covered = vec![false; words.len()];
    for starts in positions.values().filter(|s| s.len() >= 2) {
        mark_covered(starts, n, &mut covered);
    }
    sum_covered(&covered, word_chars) as f64 / total_chars as f64
}
