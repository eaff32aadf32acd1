use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::word_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Caller,
    Agent,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Caller => "caller",
            Speaker::Agent => "agent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
    pub utterances: Vec<Utterance>,
}

impl Transcript {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("transcript id is empty".into()));
        }
        if self.utterances.is_empty() {
            return Err(Error::Validation(format!(
                "transcript {:?} has no utterances",
                self.id
            )));
        }
        let mut prev: Option<usize> = None;
        for u in &self.utterances {
            if u.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "transcript {:?} utterance {} has empty text",
                    self.id, u.index
                )));
            }
            if prev.is_some_and(|p| u.index <= p) {
                return Err(Error::Validation(format!(
                    "transcript {:?} utterance indices not strictly increasing at {}",
                    self.id, u.index
                )));
            }
            prev = Some(u.index);
        }
        Ok(())
    }

    /// Renders the transcript as "Role: text" lines, the form fed to prompts.
    pub fn render(&self) -> String {
        self.utterances
            .iter()
            .map(|u| {
                let role = match u.speaker {
                    Speaker::Caller => "Caller",
                    Speaker::Agent => "Agent",
                };
                format!("{role}: {}", u.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| word_count(&u.text)).sum()
    }
}

/// On-disk shape of an utterance: the index is implied by array position.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_ms: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_ms: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain_tag: Option<String>,
    utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallDriver {
    pub transcript_id: String,
    pub text: String,
    pub word_count: usize,
    #[serde(default)]
    pub flagged: bool,
}

impl CallDriver {
    pub fn new(transcript_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        CallDriver {
            transcript_id: transcript_id.into(),
            word_count: word_count(&text),
            text,
            flagged: false,
        }
    }
}

pub fn parse_transcript_line(line: &str, line_no: usize) -> Result<Transcript> {
    let record: TranscriptRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let t = Transcript {
        id: record.id,
        domain_tag: record.domain_tag,
        utterances: record
            .utterances
            .into_iter()
            .enumerate()
            .map(|(index, u)| Utterance {
                speaker: u.speaker,
                text: u.text,
                index,
                start_ms: u.start_ms,
                end_ms: u.end_ms,
            })
            .collect(),
    };
    t.validate().map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(t)
}

/// Parses JSON-lines transcript text. Blank lines are skipped with a warning.
pub fn parse_transcripts(content: &str) -> Result<Vec<Transcript>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            tracing::warn!(line = line_no, "skipping empty transcript line");
            continue;
        }
        let t = parse_transcript_line(line, line_no)?;
        if !seen.insert(t.id.clone()) {
            return Err(Error::DuplicateId(t.id));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn ingest_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transcripts(&content)
}

/// Canonical single-line encoding of a transcript.
pub fn transcript_to_line(t: &Transcript) -> String {
    let record = TranscriptRecord {
        id: t.id.clone(),
        domain_tag: t.domain_tag.clone(),
        utterances: t
            .utterances
            .iter()
            .map(|u| UtteranceRecord {
                speaker: u.speaker,
                text: u.text.clone(),
                start_ms: u.start_ms,
                end_ms: u.end_ms,
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("transcript record serializes")
}

pub fn transcripts_to_jsonl(ts: &[Transcript]) -> String {
    let mut out = String::new();
    for t in ts {
        out.push_str(&transcript_to_line(t));
        out.push('\n');
    }
    out
}
