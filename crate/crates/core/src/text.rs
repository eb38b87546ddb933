//! Tokenization shared by every lexical metric.

use unicode_segmentation::UnicodeSegmentation;

/// Lowercased unicode words of `text`, punctuation dropped.
pub fn words(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

/// Sentences split on `.`, `?` and `!`; empty fragments are dropped.
pub fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '?', '!'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Casefold and collapse runs of whitespace, used as a text identity key.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_strip_punctuation_and_case() {
        assert_eq!(words("The Inca spoke Quechua."), ["the", "inca", "spoke", "quechua"]);
        assert_eq!(words("¿Por qué?"), ["por", "qué"]);
        assert!(words("  ...  ").is_empty());
    }

    #[test]
    fn sentences_split_on_terminators() {
        let s: Vec<_> = sentences("One. Two? Three! ").collect();
        assert_eq!(s, ["One", "Two", "Three"]);
    }

    #[test]
    fn key_collapses_whitespace() {
        assert_eq!(normalize_key("  Why   X?\n"), "why x?");
        assert_eq!(normalize_key("why x?"), normalize_key("Why  X?"));
    }
}
