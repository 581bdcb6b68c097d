//! Line-delimited JSON transcript files.
//!
//! Each line is one turn: `call_id`, `index`, `speaker` (`agent` or
//! `customer`), `text`, and an optional `ts_ms`. A file may hold many calls;
//! turns are grouped by `call_id` in order of first appearance. Unknown fields
//! are ignored.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use faqassist_core::conversation::{Conversation, ConversationError, Speaker, Turn};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("call {call_id}: {source}")]
    Conversation { call_id: String, source: ConversationError },
    #[error("no transcript records found")]
    Empty,
    #[error("expected a single call, found {0}")]
    MultipleCalls(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    call_id: Option<String>,
    index: Option<usize>,
    speaker: Option<String>,
    text: Option<String>,
    ts_ms: Option<i64>,
}

#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    call_id: &'a str,
    index: usize,
    speaker: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts_ms: Option<i64>,
}

/// Parses every call in a transcript document.
pub fn parse_transcripts(raw: &str) -> Result<Vec<Conversation>, TranscriptError> {
    let mut order: Vec<String> = Vec::new();
    let mut calls: HashMap<String, Vec<Turn>> = HashMap::new();

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| TranscriptError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let schema = |message: &str| TranscriptError::Schema {
            line: line_no,
            message: message.to_string(),
        };
        let call_id = rec.call_id.ok_or_else(|| schema("missing call_id"))?;
        let index = rec.index.ok_or_else(|| schema("missing index"))?;
        let speaker: Speaker = rec
            .speaker
            .ok_or_else(|| schema("missing speaker"))?
            .parse()
            .map_err(|e: ConversationError| schema(&e.to_string()))?;
        let text = rec.text.ok_or_else(|| schema("missing text"))?;
        if text.trim().is_empty() {
            return Err(schema("empty text"));
        }
        if !calls.contains_key(&call_id) {
            order.push(call_id.clone());
        }
        calls.entry(call_id).or_default().push(Turn {
            index,
            speaker,
            text,
            timestamp_ms: rec.ts_ms,
        });
    }

    if order.is_empty() {
        return Err(TranscriptError::Empty);
    }
    order
        .into_iter()
        .map(|call_id| {
            let turns = calls.remove(&call_id).unwrap_or_default();
            Conversation::from_turns(call_id.clone(), turns).map_err(|source| TranscriptError::Conversation { call_id, source })
        })
        .collect()
}

/// Parses a document expected to hold exactly one call.
pub fn parse_transcript(raw: &str) -> Result<Conversation, TranscriptError> {
    let mut calls = parse_transcripts(raw)?;
    if calls.len() != 1 {
        return Err(TranscriptError::MultipleCalls(calls.len()));
    }
    Ok(calls.remove(0))
}

pub fn write_transcripts<W: Write>(conversations: &[Conversation], mut out: W) -> std::io::Result<()> {
    for conv in conversations {
        for turn in conv.turns() {
            let rec = OutRecord {
                call_id: conv.id(),
                index: turn.index,
                speaker: turn.speaker.as_str(),
                text: &turn.text,
                ts_ms: turn.timestamp_ms,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn to_jsonl(conversations: &[Conversation]) -> String {
    let mut buf = Vec::new();
    write_transcripts(conversations, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_file(path: &Path) -> Result<Vec<Conversation>, TranscriptError> {
    let raw = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_transcripts(&raw)
}

/// Reads a transcript file, or every `*.jsonl` file in a directory in name
/// order.
pub fn read_path(path: &Path) -> Result<Vec<Conversation>, TranscriptError> {
    if !path.is_dir() {
        return read_file(path);
    }
    let io = |source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    let mut all = Vec::new();
    for f in files {
        all.extend(read_file(&f)?);
    }
    if all.is_empty() {
        return Err(TranscriptError::Empty);
    }
    Ok(all)
}

/// Streams records from a reader; convenience for stdin.
pub fn read_from<R: BufRead>(reader: R) -> Result<Vec<Conversation>, TranscriptError> {
    let mut raw = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TranscriptError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        raw.push_str(&line);
        raw.push('\n');
    }
    parse_transcripts(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_turns() {
        let doc = r#"{"call_id":"c1","index":0,"speaker":"customer","text":"hi"}
{"call_id":"c1","index":1,"speaker":"Agent","text":"hello","ts_ms":5,"extra":true}"#;
        let c = parse_transcript(doc).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.turns()[1].speaker, Speaker::Agent);
        assert_eq!(c.turns()[1].timestamp_ms, Some(5));
    }

    #[test]
    fn out_of_order_is_sorted() {
        let doc = r#"{"call_id":"c","index":1,"speaker":"agent","text":"b"}
{"call_id":"c","index":0,"speaker":"customer","text":"a"}"#;
        let c = parse_transcript(doc).unwrap();
        assert_eq!(c.turns()[0].text, "a");
    }

    #[test]
    fn duplicate_index_is_schema_violation() {
        let doc = r#"{"call_id":"c","index":0,"speaker":"agent","text":"b"}
{"call_id":"c","index":0,"speaker":"customer","text":"a"}"#;
        assert!(matches!(
            parse_transcript(doc),
            Err(TranscriptError::Conversation {
                source: ConversationError::DuplicateIndex(0),
                ..
            })
        ));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_transcripts("{not json"),
            Err(TranscriptError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_transcripts(r#"{"call_id":"c","index":0,"text":"x"}"#),
            Err(TranscriptError::Schema { line: 1, .. })
        ));
        assert!(matches!(
            parse_transcripts(r#"{"call_id":"c","index":0,"speaker":"bot","text":"x"}"#),
            Err(TranscriptError::Schema { .. })
        ));
        assert!(matches!(parse_transcripts("\n\n"), Err(TranscriptError::Empty)));
    }

    #[test]
    fn groups_calls_in_first_seen_order() {
        let doc = r#"{"call_id":"b","index":0,"speaker":"agent","text":"x"}
{"call_id":"a","index":0,"speaker":"agent","text":"y"}
{"call_id":"b","index":1,"speaker":"customer","text":"z"}"#;
        let calls = parse_transcripts(doc).unwrap();
        assert_eq!(calls.iter().map(|c| c.id()).collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(calls[0].len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            texts in proptest::collection::vec("[ -~]{0,12}[a-z]", 1..15),
            stamps in proptest::collection::vec(proptest::option::of(0i64..1_000_000), 15),
        ) {
            let mut c = Conversation::new("call-\"1\"");
            for (i, t) in texts.iter().enumerate() {
                let sp = if i % 2 == 0 { Speaker::Customer } else { Speaker::Agent };
                c.append_turn_at(sp, t, stamps[i]).unwrap();
            }
            let doc = to_jsonl(std::slice::from_ref(&c));
            proptest::prop_assert_eq!(parse_transcript(&doc).unwrap(), c);
        }
    }
}
