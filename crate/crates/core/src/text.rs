/// Collapses internal whitespace runs to a single space and trims the ends.
pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Matching key for names and values: lowercase with collapsed whitespace.
pub fn normalize_phrase(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}
