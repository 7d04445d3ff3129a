//! Tweet text normalization and vocabulary construction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Bundled English stop list, plus a few microblog artifacts (`rt`, `via`, `amp`).
pub const STOP_WORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "am", "amp", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "ourselves", "out", "over", "own", "rt", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "very", "via", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.binary_search(&token).is_ok()
}

fn is_url(raw: &str) -> bool {
    raw.starts_with("http://")
        || raw.starts_with("https://")
        || raw.starts_with("www.")
        || raw.contains("://")
}

/// Lowercases, drops URLs, `@mentions` and the `RT` marker, strips punctuation,
/// then removes tokens shorter than two characters and stop words.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let lowered = raw_text.to_lowercase();
    let mut out = Vec::new();
    for raw in lowered.split_whitespace() {
        if is_url(raw) || raw.starts_with('@') {
            continue;
        }
        let cleaned: String = raw
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        for token in cleaned.split_whitespace() {
            if token.chars().count() < 2 || is_stop_word(token) {
                continue;
            }
            out.push(token.to_string());
        }
    }
    out
}

/// Word list with dense indices. Words are stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_words(mut words: Vec<String>) -> Self {
        words.sort();
        words.dedup();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { words, index }
    }

    /// Keeps every token that occurs at least `min_count` times across `docs`.
    pub fn build<'a, I>(docs: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for token in doc {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let words = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(w, _)| w.to_string())
            .collect();
        Self::from_words(words)
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: u32) -> &str {
        &self.words[idx as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Maps tokens to indices, dropping out-of-vocabulary tokens.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.get(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_list_is_sorted() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn strips_urls_and_punctuation() {
        assert_eq!(tokenize("Check http://t.co/xyz NOW!!"), vec!["check", "now"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn strips_retweet_marker_and_mentions() {
        assert_eq!(tokenize("RT @bob: yoga yoga"), vec!["yoga", "yoga"]);
    }

    #[test]
    fn hashtags_keep_their_word() {
        assert_eq!(tokenize("#Yoga and a #b class"), vec!["yoga", "class"]);
    }

    #[test]
    fn vocabulary_respects_min_count() {
        let docs: Vec<Vec<String>> = vec![
            vec!["yoga".into(), "yoga".into(), "cat".into()],
            vec!["yoga".into(), "dog".into(), "cat".into()],
        ];
        let vocab = Vocabulary::build(docs.iter().map(|d| d.as_slice()), 2);
        assert_eq!(vocab.words(), &["cat".to_string(), "yoga".to_string()]);
        assert_eq!(vocab.encode(&docs[1]), vec![1, 0]);
    }
}
