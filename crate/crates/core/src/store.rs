//! Append-only event log with snapshots.
//!
//! Every state change is an [`Event`] written as one JSON line
//! (`{"seq":n,"event":{..}}`) to `events.log` and fsynced before it is
//! applied. An event is validated against the current state first, so
//! applying it cannot fail; replaying the log therefore always rebuilds the
//! same [`State`]. A `snapshot.json` holds the state at some sequence number
//! and lets [`Store::open`] skip replaying the prefix it covers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::contribution::{score_contribution, ContributionBook, RewardVerdict};
use crate::domain::{
    AnnotatedExample, ChatMessage, Classification, CommunityConfig, ExampleSource, Split, TaskKind,
};
use crate::error::{Error, Result};
use crate::eval::EvaluationReport;
use crate::gateway::{Abstain, BatchSummary};
use crate::ingest::{ChannelIndex, IngestReport};
use crate::moderation::{curation_gold, FlagDraft, ModerationQueue, Verdict};
use crate::persona::PersonaBook;

pub const SNAPSHOT_SCHEMA: &str = "hypermod.snapshot/v1";
pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Preceding messages shown to the contribution classifier.
pub const CONTEXT_WIDTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    ConfigReplaced {
        config: CommunityConfig,
    },
    MessageIngested {
        message: ChatMessage,
    },
    IngestRecorded {
        source: String,
        report: IngestReport,
        at: DateTime<Utc>,
    },
    ClassificationRecorded {
        classification: Classification,
        /// Number of preceding messages the classifier was shown.
        #[serde(default)]
        context_len: usize,
    },
    AbstainRecorded {
        abstain: Abstain,
        at: DateTime<Utc>,
    },
    ExampleAdded {
        example: AnnotatedExample,
    },
    FlagRaised {
        draft: FlagDraft,
        at: DateTime<Utc>,
    },
    FlagDecided {
        flag_id: String,
        verdict: Verdict,
        moderator_id: String,
        #[serde(default)]
        note: Option<String>,
        /// Required when upholding a `needs_label` flag.
        #[serde(default)]
        label: Option<String>,
        at: DateTime<Utc>,
        #[serde(default)]
        idempotency_key: Option<String>,
    },
    RewardDecided {
        reward_id: String,
        verdict: RewardVerdict,
        moderator_id: String,
        at: DateTime<Utc>,
        #[serde(default)]
        idempotency_key: Option<String>,
    },
    BatchRecorded {
        summary: BatchSummary,
    },
    EvaluationRecorded {
        record: EvaluationRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub task: TaskKind,
    pub model_version: String,
    pub split: Split,
    pub report: EvaluationReport,
    /// Examples the backend could not label; not part of the report.
    #[serde(default)]
    pub abstained: u64,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub event: Event,
}

/// Everything the log determines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub config: CommunityConfig,
    pub messages: BTreeMap<String, ChatMessage>,
    pub channels: ChannelIndex,
    pub ingests: Vec<(String, IngestReport)>,
    /// task -> model version -> message id -> classification
    pub classifications: BTreeMap<TaskKind, BTreeMap<String, BTreeMap<String, Classification>>>,
    /// First classification recorded per task and message; personas,
    /// contribution scores and sentiment read these.
    pub primary: BTreeMap<TaskKind, BTreeMap<String, Classification>>,
    /// Latest abstain per task and message.
    pub abstains: BTreeMap<TaskKind, BTreeMap<String, Abstain>>,
    pub examples: BTreeMap<String, AnnotatedExample>,
    pub personas: PersonaBook,
    pub moderation: ModerationQueue,
    pub contributions: ContributionBook,
    pub batches: Vec<BatchSummary>,
    pub evaluations: Vec<EvaluationRecord>,
}

impl State {
    pub fn message(&self, id: &str) -> Result<&ChatMessage> {
        self.messages
            .get(id)
            .ok_or_else(|| Error::not_found(format!("message {id}")))
    }

    pub fn classification(&self, task: TaskKind, model_version: &str, message_id: &str) -> Option<&Classification> {
        self.classifications.get(&task)?.get(model_version)?.get(message_id)
    }

    pub fn primary(&self, task: TaskKind) -> impl Iterator<Item = &Classification> {
        self.primary.get(&task).into_iter().flat_map(|m| m.values())
    }

    pub fn primary_for(&self, task: TaskKind, message_id: &str) -> Option<&Classification> {
        self.primary.get(&task)?.get(message_id)
    }

    /// Contents of up to [`CONTEXT_WIDTH`] messages preceding `message_id`
    /// in its channel, oldest first.
    pub fn context_of(&self, message_id: &str) -> Result<Vec<String>> {
        let msg = self.message(message_id)?;
        let ids = self.channels.context_window(message_id, msg.timestamp, CONTEXT_WIDTH)?;
        Ok(ids.into_iter().map(|id| self.messages[id].content.clone()).collect())
    }

    pub fn check(&self, event: &Event) -> Result<()> {
        match event {
            Event::ConfigReplaced { config } => config.validate(),
            Event::MessageIngested { message } => {
                if self.messages.contains_key(&message.message_id) {
                    return Err(Error::conflict(format!("message {} already ingested", message.message_id)));
                }
                if message.is_empty() {
                    return Err(Error::validation(format!("message {} is empty", message.message_id)));
                }
                Ok(())
            }
            Event::IngestRecorded { .. } | Event::BatchRecorded { .. } => Ok(()),
            Event::ClassificationRecorded { classification: c, context_len } => {
                c.validate()?;
                let msg = self.message(&c.message_id)?;
                if self.classification(c.task, &c.model_version, &c.message_id).is_some() {
                    return Err(Error::conflict(format!(
                        "{} already has a {} classification from {}",
                        c.message_id, c.task, c.model_version
                    )));
                }
                if c.task == TaskKind::Contribution && self.primary_for(c.task, &c.message_id).is_none() {
                    let history = self.channels.context_window(&c.message_id, msg.timestamp, 1)?;
                    score_contribution(
                        c,
                        &msg.author_id,
                        msg.timestamp,
                        *context_len,
                        !history.is_empty(),
                        &self.config.weights,
                    )?;
                }
                Ok(())
            }
            Event::AbstainRecorded { abstain, .. } => self.message(&abstain.message_id).map(|_| ()),
            Event::ExampleAdded { example } => {
                example.validate()?;
                if self.examples.contains_key(&example.example_id) {
                    return Err(Error::conflict(format!("example {} already exists", example.example_id)));
                }
                Ok(())
            }
            Event::FlagRaised { draft, .. } => {
                self.message(&draft.message_id)?;
                self.moderation.check_raise(draft)
            }
            Event::FlagDecided { flag_id, verdict, moderator_id, label, .. } => {
                if moderator_id.trim().is_empty() {
                    return Err(Error::validation("moderator_id is required"));
                }
                let flag = self.moderation.check_decide(flag_id)?;
                let gold = curation_gold(flag, *verdict, label.as_deref())?;
                let id = curation_example_id(flag_id);
                if self.examples.contains_key(&id) {
                    return Err(Error::conflict(format!("example {id} already exists")));
                }
                TaskKind::Moderation.validate_label(&gold)
            }
            Event::RewardDecided { reward_id, moderator_id, .. } => {
                if moderator_id.trim().is_empty() {
                    return Err(Error::validation("moderator_id is required"));
                }
                self.contributions.check_decide(reward_id).map(|_| ())
            }
            Event::EvaluationRecorded { record } => {
                if record.report.task != Some(record.task) {
                    return Err(Error::validation("evaluation report is for a different task"));
                }
                Ok(())
            }
        }
    }

    /// Applies a checked event. Panics only if `check` was skipped.
    pub fn apply(&mut self, seq: u64, event: &Event) {
        match event {
            Event::ConfigReplaced { config } => {
                self.personas.threshold = config.persona_threshold.max(1);
                self.config = config.clone();
            }
            Event::MessageIngested { message } => {
                self.channels.insert(message);
                self.messages.insert(message.message_id.clone(), message.clone());
            }
            Event::IngestRecorded { source, report, .. } => {
                self.ingests.push((source.clone(), report.clone()));
            }
            Event::ClassificationRecorded { classification: c, context_len } => {
                self.classifications
                    .entry(c.task)
                    .or_default()
                    .entry(c.model_version.clone())
                    .or_default()
                    .insert(c.message_id.clone(), c.clone());
                if let Some(a) = self.abstains.get_mut(&c.task) {
                    a.remove(&c.message_id);
                }
                let primary = self.primary.entry(c.task).or_default();
                if primary.contains_key(&c.message_id) {
                    return;
                }
                primary.insert(c.message_id.clone(), c.clone());
                let msg = &self.messages[&c.message_id];
                match c.task {
                    TaskKind::Intent => {
                        self.personas
                            .update_profile(&msg.author_id, c)
                            .expect("checked intent classification");
                    }
                    TaskKind::Contribution => {
                        let history = !self
                            .channels
                            .context_window(&c.message_id, msg.timestamp, 1)
                            .expect("message is indexed")
                            .is_empty();
                        let scored = score_contribution(
                            c,
                            &msg.author_id,
                            msg.timestamp,
                            *context_len,
                            history,
                            &self.config.weights,
                        )
                        .expect("checked contribution classification");
                        if let Some(ev) = scored {
                            self.contributions
                                .apply_event(seq, &ev, self.config.decay_half_life, self.config.reward_threshold)
                                .expect("event author matches ledger");
                        }
                    }
                    TaskKind::Moderation | TaskKind::Sentiment => {}
                }
            }
            Event::AbstainRecorded { abstain, .. } => {
                self.abstains
                    .entry(abstain.task)
                    .or_default()
                    .insert(abstain.message_id.clone(), abstain.clone());
            }
            Event::ExampleAdded { example } => {
                self.examples.insert(example.example_id.clone(), example.clone());
            }
            Event::FlagRaised { draft, at } => {
                self.moderation.raise(seq, draft, *at);
            }
            Event::FlagDecided { flag_id, verdict, moderator_id, note, label, at, idempotency_key } => {
                let flag = self.moderation.get(flag_id).expect("checked flag");
                let gold = curation_gold(flag, *verdict, label.as_deref()).expect("checked verdict");
                let message_id = flag.message_id.clone();
                self.moderation
                    .decide(flag_id, *verdict, gold.clone(), moderator_id, note.clone(), *at, idempotency_key.as_deref());
                if let Some(msg) = self.messages.get(&message_id) {
                    let example = AnnotatedExample {
                        example_id: curation_example_id(flag_id),
                        text: msg.content.clone(),
                        context: Vec::new(),
                        task: TaskKind::Moderation,
                        gold_label: gold,
                        annotator_ids: vec![moderator_id.clone()],
                        split: Split::Train,
                        source: ExampleSource::Curation,
                        created_at: Some(*at),
                    };
                    self.examples.insert(example.example_id.clone(), example);
                }
            }
            Event::RewardDecided { reward_id, verdict, moderator_id, at, idempotency_key } => {
                self.contributions
                    .decide(reward_id, *verdict, moderator_id, *at, idempotency_key.as_deref());
            }
            Event::BatchRecorded { summary } => self.batches.push(summary.clone()),
            Event::EvaluationRecorded { record } => self.evaluations.push(record.clone()),
        }
    }

    /// Message ids with a primary moderation label and no flag ever raised.
    pub fn unflagged_moderated(&self) -> Vec<String> {
        let flagged: BTreeSet<&str> = self.moderation.flags().iter().map(|f| f.message_id.as_str()).collect();
        self.primary(TaskKind::Moderation)
            .map(|c| c.message_id.as_str())
            .filter(|id| !flagged.contains(id))
            .map(str::to_string)
            .collect()
    }
}

pub fn curation_example_id(flag_id: &str) -> String {
    format!("cur-{flag_id}")
}

/// [`State`] obtained by applying `events` in order from the default state.
pub fn fold(events: &[Event]) -> Result<State> {
    let mut state = State::default();
    for (i, ev) in events.iter().enumerate() {
        state.check(ev)?;
        state.apply(i as u64 + 1, ev);
    }
    Ok(state)
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    schema: String,
    seq: u64,
    state: State,
}

struct LogFile {
    dir: PathBuf,
    file: File,
    len: u64,
}

pub struct Store {
    log: Option<LogFile>,
    state: State,
    seq: u64,
}

impl Store {
    /// Store that keeps events in memory only.
    pub fn in_memory() -> Self {
        Store {
            log: None,
            state: State::default(),
            seq: 0,
        }
    }

    /// Opens (creating if needed) the store in `dir`: loads the snapshot if
    /// it is readable and replays the log past it. A torn final line left by
    /// a crash mid-write is cut off; corruption anywhere else is an error.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let (mut state, snap_seq) = match read_snapshot(&dir) {
            Some(s) => (s.state, s.seq),
            None => (State::default(), 0),
        };
        let log_path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&log_path)?;
        let (entries, good_len) = read_log(&mut file)?;
        let total_len = file.metadata()?.len();
        if good_len < total_len {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        let mut seq = 0;
        let snapshot_usable = entries.iter().any(|e| e.seq == snap_seq) || snap_seq == 0;
        if !snapshot_usable {
            state = State::default();
        }
        for entry in entries {
            if entry.seq != seq + 1 {
                return Err(Error::Internal(format!(
                    "event log out of sequence: expected {}, found {}",
                    seq + 1,
                    entry.seq
                )));
            }
            seq = entry.seq;
            if snapshot_usable && seq <= snap_seq {
                continue;
            }
            state.check(&entry.event).map_err(|e| {
                Error::Internal(format!("event {seq} in the log no longer applies: {e}"))
            })?;
            state.apply(seq, &entry.event);
        }
        Ok(Store {
            log: Some(LogFile { dir, file, len: good_len }),
            state,
            seq,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn dir(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.dir.as_path())
    }

    /// Validates, persists and applies one event; returns its sequence number.
    pub fn append(&mut self, event: Event) -> Result<u64> {
        self.state.check(&event)?;
        let seq = self.seq + 1;
        self.write(&[LogEntry { seq, event }])?;
        Ok(seq)
    }

    /// Appends several events atomically: either all of them are validated,
    /// persisted and applied, or none is.
    pub fn append_all(&mut self, events: Vec<Event>) -> Result<std::ops::RangeInclusive<u64>> {
        if events.is_empty() {
            return Ok(self.seq + 1..=self.seq);
        }
        let first = self.seq + 1;
        let mut scratch = self.state.clone();
        let mut entries = Vec::with_capacity(events.len());
        for (i, event) in events.into_iter().enumerate() {
            let seq = first + i as u64;
            scratch.check(&event)?;
            scratch.apply(seq, &event);
            entries.push(LogEntry { seq, event });
        }
        self.persist(&entries)?;
        self.seq = first + entries.len() as u64 - 1;
        self.state = scratch;
        Ok(first..=self.seq)
    }

    fn write(&mut self, entries: &[LogEntry]) -> Result<()> {
        self.persist(entries)?;
        for e in entries {
            self.state.apply(e.seq, &e.event);
            self.seq = e.seq;
        }
        Ok(())
    }

    fn persist(&mut self, entries: &[LogEntry]) -> Result<()> {
        let Some(log) = &mut self.log else {
            return Ok(());
        };
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let result = log.file.write_all(&buf).and_then(|_| log.file.sync_data());
        if let Err(e) = result {
            // Leave no partial record behind.
            let _ = log.file.set_len(log.len);
            return Err(e.into());
        }
        log.len += buf.len() as u64;
        Ok(())
    }

    /// Writes the current state to `snapshot.json` (via a temporary file
    /// and rename).
    pub fn snapshot(&self) -> Result<Option<PathBuf>> {
        let Some(log) = &self.log else {
            return Ok(None);
        };
        let snap = Snapshot {
            schema: SNAPSHOT_SCHEMA.to_string(),
            seq: self.seq,
            state: self.state.clone(),
        };
        let path = log.dir.join(SNAPSHOT_FILE);
        let tmp = log.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(Some(path))
    }

    /// Rebuilds the state from the log alone, ignoring any snapshot.
    pub fn replay(dir: impl AsRef<Path>) -> Result<State> {
        let mut file = File::open(dir.as_ref().join(LOG_FILE))?;
        let (entries, _) = read_log(&mut file)?;
        let mut state = State::default();
        for e in entries {
            state.check(&e.event)?;
            state.apply(e.seq, &e.event);
        }
        Ok(state)
    }

    /// All events in the log, in order.
    pub fn events(dir: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
        let mut file = File::open(dir.as_ref().join(LOG_FILE))?;
        Ok(read_log(&mut file)?.0)
    }
}

fn read_snapshot(dir: &Path) -> Option<Snapshot> {
    let text = fs::read_to_string(dir.join(SNAPSHOT_FILE)).ok()?;
    let snap: Snapshot = serde_json::from_str(&text).ok()?;
    (snap.schema == SNAPSHOT_SCHEMA).then_some(snap)
}

/// Parsed entries plus the byte length of the well-formed prefix.
fn read_log(file: &mut File) -> Result<(Vec<LogEntry>, u64)> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&*file);
    let mut entries = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<LogEntry>(line.trim_end()) {
            Ok(e) if complete => {
                entries.push(e);
                good += n as u64;
            }
            _ if !complete => break, // torn tail
            Ok(_) => unreachable!(),
            Err(e) => {
                return Err(Error::Internal(format!(
                    "event log corrupt after {} records: {e}",
                    entries.len()
                )))
            }
        }
    }
    Ok((entries, good))
}
