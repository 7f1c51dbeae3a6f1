//! Chat-export ingestion: parsing, filtering, token estimates and the
//! per-channel ordering used for classification context.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{ChatMessage, Tokenizer};
use crate::error::{Error, Result};

/// Malformed-line share above which ingestion aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_read: u64,
    pub empty_dropped: u64,
    pub bot_dropped: u64,
    pub duplicates_dropped: u64,
    pub retained: u64,
    pub channels: u64,
    pub active_users: u64,
    pub malformed: u64,
}

/// Converts one line of a vendor export into a [`ChatMessage`].
pub trait ExportConverter {
    fn convert(&self, line: &str) -> Result<ChatMessage>;
}

/// The native line-delimited JSON schema; unknown fields are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct JsonLines;

impl ExportConverter for JsonLines {
    fn convert(&self, line: &str) -> Result<ChatMessage> {
        let msg: ChatMessage = serde_json::from_str(line)?;
        if msg.message_id.is_empty() {
            return Err(Error::validation("message_id is empty"));
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line_no: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExport {
    pub messages: Vec<ChatMessage>,
    pub report: IngestReport,
    pub errors: Vec<LineError>,
}

/// Filtering state for one community: bot accounts and already-known ids.
pub struct Ingestor<'a> {
    pub bot_author_ids: &'a BTreeSet<String>,
    pub known_ids: &'a dyn Fn(&str) -> bool,
}

impl Ingestor<'_> {
    /// Parses line-delimited records. Blank lines are skipped; malformed
    /// ones are recorded and skipped unless they exceed
    /// [`MAX_MALFORMED_FRACTION`] of the non-blank lines.
    pub fn parse<R: Read>(&self, reader: R, converter: &dyn ExportConverter) -> Result<ParsedExport> {
        let mut report = IngestReport::default();
        let mut errors = Vec::new();
        let mut messages = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut channels = BTreeSet::new();
        let mut authors = BTreeSet::new();
        let mut lines = 0u64;

        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                    lines += 1;
                    errors.push(LineError { line_no, reason: "invalid UTF-8".into() });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            let msg = match converter.convert(&line) {
                Ok(m) => m,
                Err(e) => {
                    errors.push(LineError {
                        line_no,
                        reason: e.to_string().replace(['\t', '\n'], " "),
                    });
                    continue;
                }
            };
            report.total_read += 1;
            if (self.known_ids)(&msg.message_id) || !seen.insert(msg.message_id.clone()) {
                report.duplicates_dropped += 1;
            } else if msg.is_empty() {
                report.empty_dropped += 1;
            } else if self.bot_author_ids.contains(&msg.author_id) {
                report.bot_dropped += 1;
            } else {
                channels.insert(msg.channel_id.clone());
                authors.insert(msg.author_id.clone());
                messages.push(msg);
            }
        }
        report.malformed = errors.len() as u64;
        report.retained = messages.len() as u64;
        report.channels = channels.len() as u64;
        report.active_users = authors.len() as u64;
        if lines > 0 && report.malformed as f64 > MAX_MALFORMED_FRACTION * lines as f64 {
            let first = errors.first().map(|e| format!(" (first at line {}: {})", e.line_no, e.reason));
            return Err(Error::validation(format!(
                "{} of {} lines are malformed, above the {:.0}% limit{}",
                report.malformed,
                lines,
                MAX_MALFORMED_FRACTION * 100.0,
                first.unwrap_or_default()
            )));
        }
        Ok(ParsedExport { messages, report, errors })
    }
}

pub fn error_sidecar_path(input: &Path) -> PathBuf {
    let mut name = input.as_os_str().to_owned();
    name.push(".errors");
    PathBuf::from(name)
}

/// Writes `line_no<TAB>reason` rows next to the input file. An existing
/// sidecar is replaced; none is written for a clean file.
pub fn write_error_sidecar(input: &Path, errors: &[LineError]) -> Result<Option<PathBuf>> {
    let path = error_sidecar_path(input);
    if errors.is_empty() {
        if path.exists() {
            fs::remove_file(&path)?;
        }
        return Ok(None);
    }
    let mut f = fs::File::create(&path)?;
    for e in errors {
        writeln!(f, "{}\t{}", e.line_no, e.reason)?;
    }
    Ok(Some(path))
}

pub fn parse_export(
    path: &Path,
    bot_author_ids: &BTreeSet<String>,
    known_ids: &dyn Fn(&str) -> bool,
) -> Result<ParsedExport> {
    let file = fs::File::open(path)?;
    let parsed = Ingestor { bot_author_ids, known_ids }.parse(file, &JsonLines);
    if let Ok(p) = &parsed {
        write_error_sidecar(path, &p.errors)?;
    }
    parsed
}

pub fn estimate_tokens(text: &str, tokenizer: Tokenizer) -> u64 {
    match tokenizer {
        Tokenizer::CharsDiv4 => (text.chars().count() as u64).div_ceil(4),
        Tokenizer::Whitespace => text.split_whitespace().count() as u64,
    }
}

/// Message ids per channel ordered by (timestamp, message_id).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelIndex {
    channels: BTreeMap<String, Vec<(DateTime<Utc>, String)>>,
    position: BTreeMap<String, String>,
}

impl ChannelIndex {
    pub fn insert(&mut self, msg: &ChatMessage) {
        let entries = self.channels.entry(msg.channel_id.clone()).or_default();
        let key = (msg.timestamp, msg.message_id.clone());
        let at = entries.partition_point(|e| *e < key);
        entries.insert(at, key);
        self.position.insert(msg.message_id.clone(), msg.channel_id.clone());
    }

    pub fn channel_of(&self, message_id: &str) -> Option<&str> {
        self.position.get(message_id).map(String::as_str)
    }

    pub fn channel(&self, channel_id: &str) -> impl Iterator<Item = &str> {
        self.channels
            .get(channel_id)
            .into_iter()
            .flatten()
            .map(|(_, id)| id.as_str())
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    /// Up to `width` ids immediately preceding `message_id` in its channel,
    /// oldest first.
    pub fn context_window(&self, message_id: &str, timestamp: DateTime<Utc>, width: usize) -> Result<Vec<&str>> {
        let channel = self
            .channel_of(message_id)
            .ok_or_else(|| Error::not_found(format!("message {message_id}")))?;
        let entries = &self.channels[channel];
        let key = (timestamp, message_id.to_string());
        let at = entries.partition_point(|e| *e < key);
        if entries.get(at).map(|e| e.1.as_str()) != Some(message_id) {
            return Err(Error::not_found(format!("message {message_id}")));
        }
        let start = at.saturating_sub(width);
        Ok(entries[start..at].iter().map(|(_, id)| id.as_str()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn line(id: &str, author: &str, content: &str) -> String {
        serde_json::json!({
            "message_id": id,
            "channel_id": "c1",
            "channel_name": "general",
            "author_id": author,
            "author_name": author,
            "timestamp": "2023-03-01T12:00:00Z",
            "content": content,
            "extra_field": 7
        })
        .to_string()
    }

    fn parse(text: &str, bots: &[&str]) -> Result<ParsedExport> {
        let bots: BTreeSet<String> = bots.iter().map(|b| b.to_string()).collect();
        Ingestor { bot_author_ids: &bots, known_ids: &|_| false }.parse(text.as_bytes(), &JsonLines)
    }

    #[test]
    fn empty_input_is_all_zero() {
        assert_eq!(parse("", &[]).unwrap().report, IngestReport::default());
    }

    #[test]
    fn filters_empty_and_bot() {
        let text = [line("1", "alice", "gm"), line("2", "bob", "  \t "), line("3", "bot", "beep")].join("\n");
        let p = parse(&text, &["bot"]).unwrap();
        let r = &p.report;
        assert_eq!((r.retained, r.empty_dropped, r.bot_dropped), (1, 1, 1));
        assert_eq!(r.retained, r.total_read - r.empty_dropped - r.bot_dropped - r.duplicates_dropped);
        assert_eq!((r.channels, r.active_users), (1, 1));
    }

    #[test]
    fn content_is_kept_byte_exact() {
        let p = parse(&line("1", "a", "  hi there \u{1F600} "), &[]).unwrap();
        assert_eq!(p.messages[0].content, "  hi there \u{1F600} ");
    }

    #[test]
    fn first_duplicate_wins() {
        let text = [line("1", "a", "first"), line("1", "a", "second")].join("\n");
        let p = parse(&text, &[]).unwrap();
        assert_eq!(p.report.duplicates_dropped, 1);
        assert_eq!(p.messages[0].content, "first");
    }

    #[test]
    fn malformed_lines_are_recorded() {
        let mut lines: Vec<String> = (0..20).map(|i| line(&i.to_string(), "a", "x")).collect();
        lines.insert(4, "{not json".into());
        let mut bad_ts = line("99", "a", "x");
        bad_ts = bad_ts.replace("2023-03-01T12:00:00Z", "yesterday");
        lines.push(bad_ts);
        let p = parse(&lines.join("\n"), &[]).unwrap();
        assert_eq!(p.errors.len(), 2);
        assert_eq!(p.errors[0].line_no, 5);
        assert_eq!(p.report.retained, 20);
    }

    #[test]
    fn too_many_malformed_aborts() {
        let text = [line("1", "a", "x"), "garbage".into(), "{}".into()].join("\n");
        assert!(matches!(parse(&text, &[]), Err(Error::Validation(_))));
    }

    #[test]
    fn sidecar_written_next_to_input() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("export.jsonl");
        let mut lines: Vec<String> = (0..12).map(|i| line(&i.to_string(), "a", "x")).collect();
        lines.push("oops".into());
        fs::write(&input, lines.join("\n")).unwrap();
        let p = parse_export(&input, &BTreeSet::new(), &|_| false).unwrap();
        assert_eq!(p.report.malformed, 1);
        let side = fs::read_to_string(error_sidecar_path(&input)).unwrap();
        assert!(side.starts_with("13\t"));
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens("", Tokenizer::CharsDiv4), 0);
        assert_eq!(estimate_tokens("abcd", Tokenizer::CharsDiv4), 1);
        let s = "Hey that was a great game!";
        assert_eq!(s.chars().count(), 26);
        assert_eq!(estimate_tokens(s, Tokenizer::CharsDiv4), 7);
        assert_eq!(estimate_tokens(s, Tokenizer::Whitespace), 6);
        assert_eq!(estimate_tokens("\u{1F600}\u{1F600}", Tokenizer::CharsDiv4), 1);
    }

    fn msg(id: &str, channel: &str, secs: i64) -> ChatMessage {
        ChatMessage {
            message_id: id.into(),
            channel_id: channel.into(),
            channel_name: channel.into(),
            author_id: "a".into(),
            author_name: "a".into(),
            timestamp: Utc.timestamp_opt(secs, 0).unwrap(),
            content: id.into(),
            reply_to: None,
        }
    }

    #[test]
    fn context_windows() {
        let mut idx = ChannelIndex::default();
        let msgs: Vec<ChatMessage> = (1..=5).map(|i| msg(&format!("m{i}"), "c", i * 10)).collect();
        // Insert out of order, plus noise in another channel.
        for m in msgs.iter().rev() {
            idx.insert(m);
        }
        idx.insert(&msg("other", "d", 35));
        assert!(idx.context_window("m1", msgs[0].timestamp, 2).unwrap().is_empty());
        assert_eq!(idx.context_window("m2", msgs[1].timestamp, 2).unwrap(), vec!["m1"]);
        assert_eq!(idx.context_window("m5", msgs[4].timestamp, 2).unwrap(), vec!["m3", "m4"]);
        assert!(idx.context_window("nope", msgs[0].timestamp, 2).is_err());
    }
}
