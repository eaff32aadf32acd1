//! Text normalization: lowercasing, punctuation stripping, stop-word removal
//! and a small rule-based lemmatizer.
//!
//! The lemmatizer is approximate. It folds common plural and verb inflections
//! onto a shared stem ("requesting" and "requested" both become "request") and
//! is guaranteed idempotent, which is what grouping and keyword counting need.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Version tag of the shipped stop-word list and lemma rules.
pub const NORMALIZER_VERSION: u32 = 1;

/// English stop-words, version 1.
pub const STOP_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan", "shan't",
    "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't", "wouldn",
    "wouldn't",
];

/// Inflected forms the suffix rules get wrong.
const IRREGULAR: &[(&str, &str)] = &[
    ("anything", "anything"),
    ("bought", "buy"),
    ("children", "child"),
    ("created", "create"),
    ("creating", "create"),
    ("evening", "evening"),
    ("everything", "everything"),
    ("got", "get"),
    ("gotten", "get"),
    ("lost", "lose"),
    ("made", "make"),
    ("men", "man"),
    ("morning", "morning"),
    ("nothing", "nothing"),
    ("paid", "pay"),
    ("people", "person"),
    ("sent", "send"),
    ("something", "something"),
    ("thing", "thing"),
    ("told", "tell"),
    ("took", "take"),
    ("went", "go"),
    ("women", "woman"),
];

fn stop_words() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        // Punctuation is stripped before lookup, so index the stripped forms too.
        STOP_WORDS
            .iter()
            .flat_map(|w| [w.to_string(), strip_punctuation(w)])
            .collect()
    })
}

pub fn is_stop_word(token: &str) -> bool {
    stop_words().contains(token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedText {
    pub tokens: Vec<String>,
    pub source: String,
}

impl NormalizedText {
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Number of maximal whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn strip_punctuation(token: &str) -> String {
    token.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Lowercases and strips punctuation from one raw token. Returns `None` when
/// nothing content-bearing is left (empty or a stop-word).
pub fn content_form(raw: &str) -> Option<String> {
    let stripped = strip_punctuation(&raw.to_lowercase());
    if stripped.is_empty() || is_stop_word(&stripped) {
        return None;
    }
    let lemma = lemmatize(&stripped);
    if lemma.is_empty() || is_stop_word(&lemma) {
        None
    } else {
        Some(lemma)
    }
}

pub fn normalize(text: &str) -> NormalizedText {
    NormalizedText {
        tokens: text.split_whitespace().filter_map(content_form).collect(),
        source: text.to_string(),
    }
}

/// Lemmatizes a lowercase, punctuation-free word by applying the suffix rules
/// until a fixed point is reached.
pub fn lemmatize(word: &str) -> String {
    if let Some((_, lemma)) = IRREGULAR.iter().find(|(w, _)| *w == word) {
        return lemma.to_string();
    }
    let mut current = word.to_string();
    // Every rule either shortens the word or appends a final 'e', and no rule
    // fires on a word ending in 'e', so this terminates quickly.
    for _ in 0..8 {
        let next = apply_rules(&current);
        if next == current {
            break;
        }
        if let Some((_, lemma)) = IRREGULAR.iter().find(|(w, _)| *w == next) {
            return lemma.to_string();
        }
        current = next;
    }
    current
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn is_consonant(c: char) -> bool {
    c.is_ascii_alphabetic() && !matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn apply_rules(w: &str) -> String {
    let n = w.chars().count();
    if !w.is_ascii() {
        return w.to_string();
    }
    // plurals
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    if w.ends_with("sses") {
        return w[..n - 2].to_string();
    }
    if n > 4
        && (w.ends_with("xes") || w.ends_with("ches") || w.ends_with("shes") || w.ends_with("zzes"))
    {
        return w[..n - 2].to_string();
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is")
    {
        return w[..n - 1].to_string();
    }
    // verb inflections
    if n > 4 && w.ends_with("ied") {
        return format!("{}y", &w[..n - 3]);
    }
    if let Some(stem) = w.strip_suffix("ing") {
        if stem.len() >= 3 && has_vowel(stem) {
            return restore_stem(stem);
        }
    }
    if let Some(stem) = w.strip_suffix("ed") {
        if stem.len() >= 3 && has_vowel(stem) && !stem.ends_with('e') {
            return restore_stem(stem);
        }
    }
    w.to_string()
}

/// Repairs a stem left by stripping "-ing" / "-ed": undoubles a final
/// consonant ("shipp" -> "ship") or restores a dropped final 'e'
/// ("chang" -> "change").
fn restore_stem(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    let last = chars[n - 1];
    let prev = chars[n - 2];
    if last == prev && is_consonant(last) && !matches!(last, 'l' | 's' | 'z') {
        return chars[..n - 1].iter().collect();
    }
    let needs_e = match last {
        'v' | 'c' => true,
        'z' => prev == 'i',
        'g' => matches!(prev, 'n' | 'r'),
        't' => prev == 'a' && n >= 3 && is_consonant(chars[n - 3]),
        _ => false,
    };
    if needs_e {
        format!("{stem}e")
    } else {
        stem.to_string()
    }
}
