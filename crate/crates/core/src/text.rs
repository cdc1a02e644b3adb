//! Small text helpers shared by keyword extraction, profile parsing and the
//! fixture embedder.

use std::collections::BTreeSet;

/// Lowercase, unify typographic apostrophes and collapse whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            match c {
                '\u{2019}' | '\u{2018}' | '`' => out.push('\''),
                _ => out.extend(c.to_lowercase()),
            }
        }
    }
    out
}

/// A token with its character offset in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub char_offset: usize,
}

/// Split on anything that is not alphanumeric, keeping apostrophes that sit
/// between two word characters ("don't", "Earth’s").
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let is_word = |c: char| c.is_alphanumeric();
    let is_apos = |c: char| matches!(c, '\'' | '\u{2019}');
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..chars.len() {
        let c = chars[i].1;
        let inner_apos = is_apos(c)
            && start.is_some()
            && chars.get(i + 1).is_some_and(|&(_, n)| is_word(n));
        if is_word(c) || inner_apos {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            tokens.push(make_token(text, &chars, s, i));
        }
    }
    if let Some(s) = start {
        tokens.push(make_token(text, &chars, s, chars.len()));
    }
    tokens
}

fn make_token<'a>(text: &'a str, chars: &[(usize, char)], start: usize, end: usize) -> Token<'a> {
    let from = chars[start].0;
    let to = chars.get(end).map_or(text.len(), |&(b, _)| b);
    Token {
        text: &text[from..to],
        char_offset: start,
    }
}

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "aren't", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "can't", "cannot", "could", "couldn't", "did", "didn't", "do",
    "does", "doesn't", "doing", "don't", "down", "during", "each", "even", "ever", "every", "few",
    "finally", "for", "from", "further", "get", "got", "had", "hadn't", "has", "hasn't", "have",
    "haven't", "having", "he", "he'd", "he'll", "he's", "her", "here", "here's", "hers",
    "herself", "him", "himself", "his", "how", "how's", "i", "i'd", "i'll", "i'm", "i've", "if",
    "in", "into", "is", "isn't", "it", "it's", "its", "itself", "just", "let", "let's", "like",
    "me", "more", "most", "much", "must", "my", "myself", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out", "over",
    "own", "really", "said", "same", "she", "she'd", "she'll", "she's", "should", "shouldn't",
    "so", "some", "such", "than", "that", "that's", "the", "their", "theirs", "them",
    "themselves", "then", "there", "there's", "these", "they", "they'd", "they'll", "they're",
    "they've", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was",
    "wasn't", "we", "we'd", "we'll", "we're", "we've", "were", "weren't", "what", "what's",
    "when", "when's", "where", "where's", "which", "while", "who", "who's", "whom", "why",
    "why's", "will", "with", "won't", "would", "wouldn't", "yes", "yet", "you", "you'd",
    "you'll", "you're", "you've", "your", "yours", "yourself", "yourselves",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// First sentence of `text`, up to and including its terminal punctuation.
pub fn first_sentence(text: &str) -> &str {
    let trimmed = text.trim();
    let mut prev_terminal = false;
    for (i, c) in trimmed.char_indices() {
        if prev_terminal && c.is_whitespace() {
            return trimmed[..i].trim_end();
        }
        prev_terminal = matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
            || (prev_terminal && matches!(c, '"' | '\u{201d}' | '\''));
    }
    trimmed
}

/// Truncate to at most `max_chars` characters, preferring a sentence end.
pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut: String = text.chars().take(max_chars).collect();
    match cut.rfind(['.', '!', '?']) {
        Some(i) if i > 0 => cut[..=i].to_string(),
        _ => cut,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_keeps_inner_apostrophes() {
        let toks: Vec<_> = tokenize("Earth’s surface, don't 'quote'").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, ["Earth’s", "surface", "don't", "quote"]);
    }

    #[test]
    fn token_offsets_are_char_indexes() {
        let toks = tokenize("“The sunset” is");
        assert_eq!(toks[0].text, "The");
        assert_eq!(toks[0].char_offset, 1);
        assert_eq!(toks[1].char_offset, 5);
    }

    #[test]
    fn normalize_unifies_apostrophes() {
        assert_eq!(normalize("  Earth’s   Surface "), "earth's surface");
    }

    #[test]
    fn sentences() {
        assert_eq!(first_sentence("One. Two."), "One.");
        assert_eq!(first_sentence("\"Wow!\" she said. Then"), "\"Wow!\"");
        assert_eq!(first_sentence("no terminal"), "no terminal");
        assert_eq!(truncate_chars("Ab. Cd ef", 6), "Ab.");
        assert_eq!(truncate_chars("abcdef", 3), "abc");
    }
}
