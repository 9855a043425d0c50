/// Lowercases, trims and collapses runs of whitespace to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// [`normalize`] followed by removal of punctuation and the articles
/// "a", "an" and "the".
pub fn normalize_answer(s: &str) -> String {
    let no_punct: String = s
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    normalize(&no_punct)
        .split(' ')
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized whitespace tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}
