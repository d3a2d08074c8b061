//! Tokenization shared by the embedding, lexical and proxy code.

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Byte offsets of whole-word, case-insensitive occurrences of `term` in `text`.
///
/// `term` may contain spaces or hyphens; the match only requires that the
/// characters around it are not alphanumeric.
pub fn find_term(text: &str, term: &str) -> Vec<(usize, usize)> {
    // Offsets refer to the lowercased text, which matches `text` for ASCII.
    find_in(&text.to_lowercase(), &term.to_lowercase())
}

fn find_in(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = hay[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            out.push((start, end));
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    out
}
