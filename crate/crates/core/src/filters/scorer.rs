use std::collections::HashSet;

use crate::text::normalized_words;

/// Deterministic document score in `[0, 1]`.
pub trait DocumentScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, text: &str) -> f64;
}

const ENGLISH_WORDS: &str = include_str!("../../data/english_words.txt");

/// Fraction of a document's words found in a bundled list of common English words.
#[derive(Debug, Clone)]
pub struct WordlistScorer {
    words: HashSet<String>,
}

impl WordlistScorer {
    pub fn english() -> Self {
        Self::from_words(ENGLISH_WORDS.lines())
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        WordlistScorer {
            words: words
                .into_iter()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

impl DocumentScorer for WordlistScorer {
    fn name(&self) -> &str {
        "english_wordlist"
    }

    fn score(&self, text: &str) -> f64 {
        let mut total = 0usize;
        let mut hits = 0usize;
        for w in normalized_words(text) {
            total += 1;
            if self.words.contains(&w) {
                hits += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

/// Heuristic stand-in for a trained quality classifier.
///
/// Averages three signals: common-English word fraction, the fraction of
/// non-empty lines that end in sentence punctuation, and a word-length term
/// that is 1 for mean word lengths in `[3, 7]` and decays linearly to 0 at
/// 1 and 12 characters.
#[derive(Debug, Clone)]
pub struct HeuristicQualityScorer {
    wordlist: WordlistScorer,
}

impl Default for HeuristicQualityScorer {
    fn default() -> Self {
        HeuristicQualityScorer {
            wordlist: WordlistScorer::english(),
        }
    }
}

impl DocumentScorer for HeuristicQualityScorer {
    fn name(&self) -> &str {
        "heuristic_quality"
    }

    fn score(&self, text: &str) -> f64 {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return 0.0;
        }
        let terminal = lines
            .iter()
            .filter(|l| l.ends_with(['.', '!', '?', '"', '\'']))
            .count() as f64
            / lines.len() as f64;

        let words: Vec<&str> = text.split_whitespace().collect();
        let mean_len = words.iter().map(|w| w.chars().count()).sum::<usize>() as f64
            / words.len().max(1) as f64;
        let length_term = if (3.0..=7.0).contains(&mean_len) {
            1.0
        } else if mean_len < 3.0 {
            ((mean_len - 1.0) / 2.0).clamp(0.0, 1.0)
        } else {
            ((12.0 - mean_len) / 5.0).clamp(0.0, 1.0)
        };

        (self.wordlist.score(text) + terminal + length_term) / 3.0
    }
}
