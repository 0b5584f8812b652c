//! Small text utilities shared by every stage.

/// Maximum number of words allowed in an open code or category label.
pub const MAX_LABEL_WORDS: usize = 5;

/// Whitespace word count after trimming.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercase and collapse runs of whitespace to a single space.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn alnum_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A label cleaned up for storage, plus whether it had to be cut short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanLabel {
    pub text: String,
    pub truncated: bool,
}

/// Trim surrounding whitespace and quote characters, collapse internal
/// whitespace, and cut the label to `max_words` words.
///
/// Returns `None` when nothing is left.
pub fn clean_label(raw: &str, max_words: usize) -> Option<CleanLabel> {
    let first_line = raw.lines().find(|l| !l.trim().is_empty())?;
    let stripped = first_line
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace())
        .trim_end_matches(['.', ',', ';', ':']);
    let words: Vec<&str> = stripped.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    let truncated = words.len() > max_words;
    let text = words[..words.len().min(max_words)].join(" ");
    Some(CleanLabel { text, truncated })
}
