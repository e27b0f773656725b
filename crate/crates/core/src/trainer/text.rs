//! Clip labels from subtitle-like text.
//!
//! Tokens are lowercased, apostrophes dropped and every other
//! non-alphanumeric character treated as a separator. Stop words are
//! removed and the remaining tokens stemmed by [`stem`], then matched
//! against the vocabulary's stems.
//!
//! Stemming rules, applied to words longer than three letters:
//!
//! 1. `-ing` or `-ed` is removed when at least three letters containing a
//!    vowel remain; a doubled final consonant other than `l`, `s`, `z` is
//!    then undoubled (`running` → `run`).
//! 2. Otherwise `-es` is removed after `s`, `x`, `z`, `ch` or `sh`
//!    (`touches` → `touch`).
//! 3. Otherwise a final `-s` is removed unless the word ends in `ss`, `us`
//!    or `is`.
//! 4. A trailing `e` is dropped from the result if at least three letters
//!    remain, so `raise`, `raised` and `raising` all become `rais`.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "before", "being", "but", "by", "can", "could", "did", "do", "does", "doing", "down",
    "for", "from", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "my", "no", "nor",
    "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over",
    "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
    "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'y')
}

fn strip_verb_suffix(word: &str, suffix: &str) -> Option<String> {
    let stem = word.strip_suffix(suffix)?;
    if stem.len() < 3 || !stem.bytes().any(is_vowel) {
        return None;
    }
    let b = stem.as_bytes();
    let n = b.len();
    if b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        return Some(stem[..n - 1].to_string());
    }
    Some(stem.to_string())
}

pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    if w.len() <= 3 || !w.is_ascii() {
        return w;
    }
    let mut s = if let Some(s) = strip_verb_suffix(&w, "ing").or_else(|| strip_verb_suffix(&w, "ed")) {
        s
    } else if let Some(base) = w.strip_suffix("es").filter(|b| {
        ["s", "x", "z", "ch", "sh"].iter().any(|e| b.ends_with(e))
    }) {
        base.to_string()
    } else if w.ends_with('s') && !["ss", "us", "is"].iter().any(|e| w.ends_with(e)) {
        w[..w.len() - 1].to_string()
    } else {
        w
    };
    if s.len() > 3 && s.ends_with('e') {
        s.pop();
    }
    s
}

/// Lowercased tokens with punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|&c| c != '\'' && c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Ordered class words, identified by their stems.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    stems: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            stems: Vec::new(),
            index: HashMap::new(),
        };
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            let s = stem(&w);
            if s.is_empty() {
                return Err(Error::InvalidInput("empty vocabulary word".into()));
            }
            if let Some(&i) = vocab.index.get(&s) {
                return Err(Error::InvalidInput(format!(
                    "`{w}` and `{}` share the stem `{s}`",
                    vocab.words[i]
                )));
            }
            vocab.index.insert(s.clone(), vocab.words.len());
            vocab.words.push(w);
            vocab.stems.push(s);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn class_of(&self, stem: &str) -> Option<usize> {
        self.index.get(stem).copied()
    }
}

/// Vocabulary classes mentioned in `text`.
pub fn extract_labels(text: &str, vocab: &Vocabulary, stopwords: &HashSet<String>) -> BTreeSet<usize> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .filter_map(|t| vocab.class_of(&stem(&t)))
        .collect()
}
