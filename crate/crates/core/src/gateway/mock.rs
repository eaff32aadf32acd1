//! Deterministic offline backends.
//!
//! The mock completer first looks the prompt up in a fixture table keyed by
//! the SHA-256 of the prompt. Without a fixture it falls back to simple
//! extractive rules keyed on the shape of the shipped prompts, so the full
//! pipeline produces meaningful output offline.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use sha2::{Digest, Sha256};

use super::{
    Completer, Completion, CompletionRequest, Embedder, EmbeddingVector, Entailer,
    EntailmentLabel, EntailmentVerdict,
};
use crate::error::{Error, Result};
use crate::text::normalize;

pub const MOCK_EMBED_DIM: usize = 64;

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct MockCompleter {
    fixtures: BTreeMap<String, String>,
    adapters: BTreeSet<String>,
}

impl Default for MockCompleter {
    fn default() -> Self {
        MockCompleter {
            fixtures: BTreeMap::new(),
            adapters: BTreeSet::from(["call-driver".to_string()]),
        }
    }
}

impl MockCompleter {
    pub fn with_fixtures(mut self, fixtures: BTreeMap<String, String>) -> Self {
        self.fixtures.extend(fixtures);
        self
    }

    /// Registers a fixture for an exact prompt.
    pub fn with_fixture(mut self, prompt: &str, output: impl Into<String>) -> Self {
        self.fixtures.insert(prompt_hash(prompt), output.into());
        self
    }

    pub fn with_adapters(mut self, adapters: impl IntoIterator<Item = String>) -> Self {
        self.adapters.extend(adapters);
        self
    }

    fn fallback(&self, req: &CompletionRequest) -> String {
        if req.adapter.is_some() {
            return lead_caller_sentence(&req.prompt);
        }
        if let Some(keywords) = between(&req.prompt, "most common words:", ". [/INST]") {
            return title_from_keywords(keywords);
        }
        let questions = questions_in_bullets(&req.prompt);
        if !questions.is_empty() {
            return questions.join("\n");
        }
        req.prompt.lines().next().unwrap_or("").trim().to_string()
    }
}

impl Completer for MockCompleter {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        if let Some(adapter) = &req.adapter {
            if !self.adapters.contains(adapter) {
                return Err(Error::Config(format!("unknown adapter {adapter:?}")));
            }
        }
        let text = match self.fixtures.get(&prompt_hash(&req.prompt)) {
            Some(t) => t.clone(),
            None => self.fallback(req),
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > req.max_tokens as usize {
            return Ok(Completion {
                text: words[..req.max_tokens as usize].join(" "),
                truncated: true,
            });
        }
        Ok(Completion {
            text,
            truncated: false,
        })
    }
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let to = s[from..].find(end)? + from;
    Some(s[from..to].trim())
}

/// First sentence of the first caller turn, capped at 20 words.
fn lead_caller_sentence(prompt: &str) -> String {
    let Some(turn) = prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("Caller:"))
    else {
        return String::new();
    };
    let turn = turn.trim();
    let end = turn
        .char_indices()
        .find(|&(_, c)| matches!(c, '.' | '?' | '!'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(turn.len());
    let sentence: Vec<&str> = turn[..end].split_whitespace().take(20).collect();
    sentence.join(" ")
}

fn title_from_keywords(keywords: &str) -> String {
    let words: Vec<String> = keywords
        .split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(first) => first.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect();
    if words.is_empty() {
        "General Inquiry".into()
    } else {
        words.join(" ")
    }
}

/// Question sentences found in "- " bullet lines, in order, deduplicated.
fn questions_in_bullets(prompt: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in prompt.lines() {
        let Some(body) = line.trim_start().strip_prefix("- ") else {
            continue;
        };
        let mut start = 0;
        for (i, c) in body.char_indices() {
            if matches!(c, '.' | '!' | '?') {
                let sentence = body[start..=i].trim();
                if c == '?' && !sentence.is_empty() && seen.insert(sentence.to_string()) {
                    out.push(sentence.to_string());
                }
                start = i + 1;
            }
        }
    }
    out
}

/// Feature-hashes the normalized bag of tokens into a fixed-width vector.
///
/// Word order never matters. Distinct tokens can collide in a bucket, so
/// "disjoint tokens give cosine 0" only holds for collision-free token sets.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder { dim: dim.max(1) }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        let tokens = normalize(text).tokens;
        if tokens.is_empty() {
            values[self.bucket("")] = 1.0;
        }
        for t in &tokens {
            values[self.bucket(t)] += 1.0;
        }
        EmbeddingVector::normalized(values)
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lexical-containment entailment: the share of the hypothesis' content
/// tokens that also occur in the premise. At least 0.8 is entailment, at least
/// 0.5 neutral, otherwise contradiction.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEntailer;

impl MockEntailer {
    pub fn containment(premise: &str, hypothesis: &str) -> f64 {
        let p: HashSet<String> = normalize(premise).tokens.into_iter().collect();
        let h: HashSet<String> = normalize(hypothesis).tokens.into_iter().collect();
        if h.is_empty() {
            return 1.0;
        }
        h.intersection(&p).count() as f64 / h.len() as f64
    }
}

impl Entailer for MockEntailer {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict> {
        let ratio = Self::containment(premise, hypothesis);
        let label = if ratio >= 0.8 {
            EntailmentLabel::Entailment
        } else if ratio >= 0.5 {
            EntailmentLabel::Neutral
        } else {
            EntailmentLabel::Contradiction
        };
        Ok(label.into())
    }
}
