//! Word-level text normalization shared by the filters and keyword matching.

/// Whitespace-separated tokens, trimmed of leading/trailing non-alphanumeric
/// characters and lowercased. Tokens that are pure punctuation are skipped.
pub fn normalized_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        (!trimmed.is_empty()).then(|| trimmed.to_lowercase())
    })
}

/// Maximal runs of alphanumeric characters, lowercased.
pub fn alnum_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}
