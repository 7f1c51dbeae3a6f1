//! One community's pipeline over its event store: ingest, classify, review,
//! reward and report.
//!
//! Every mutating operation validates and writes through the [`Store`], so
//! the event log alone reproduces the community's state.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::contribution::{set_weights, LeaderboardEntry, RewardRecommendation, RewardState, RewardVerdict};
use crate::domain::{AnnotatedExample, CommunityConfig, ExampleSource, Split, TaskKind, Weights};
use crate::error::{Error, Result};
use crate::eval::{confusion, evaluate, EvaluationReport};
use crate::gateway::{BatchOptions, BatchRun, BatchStatus, BatchSummary, ClassifyRequest, Gateway, Outcome};
use crate::ingest::{write_error_sidecar, ExportConverter, IngestReport, Ingestor, JsonLines};
use crate::moderation::{false_negative_audit, policy_flag, Flag, FlagDraft, FlagOrigin, FlagState, Page, Verdict, NEEDS_LABEL};
use crate::persona::{CompositionReport, Persona, PersonaProfile};
use crate::sentiment::{bucketize, SentimentBucket, SentimentObservation};
use crate::store::{EvaluationRecord, Event, State, Store};

/// A moderator's verdict on a flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagDecision {
    pub verdict: Verdict,
    pub moderator_id: String,
    #[serde(default)]
    pub note: Option<String>,
    /// Gold label when upholding a `needs_label` flag.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDecision {
    pub verdict: RewardVerdict,
    pub moderator_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaPage {
    pub report: CompositionReport,
    pub profiles: Vec<PersonaProfile>,
    pub next: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainingExport {
    pub path: PathBuf,
    pub examples: u64,
}

/// Which examples a retraining export includes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub task: TaskKind,
    pub source: Option<ExampleSource>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

pub struct Community {
    store: Store,
}

impl Community {
    /// Opens the store in `dir`. A new store is seeded with `config`; an
    /// existing one keeps the configuration recorded in its log.
    pub fn open(dir: impl AsRef<Path>, config: &CommunityConfig) -> Result<Self> {
        Self::seed(Store::open(dir)?, config)
    }

    pub fn in_memory(config: &CommunityConfig) -> Result<Self> {
        Self::seed(Store::in_memory(), config)
    }

    fn seed(mut store: Store, config: &CommunityConfig) -> Result<Self> {
        if store.seq() == 0 {
            store.append(Event::ConfigReplaced { config: config.clone() })?;
        }
        Ok(Community { store })
    }

    pub fn state(&self) -> &State {
        self.store.state()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &CommunityConfig {
        &self.state().config
    }

    pub fn snapshot(&self) -> Result<Option<PathBuf>> {
        self.store.snapshot()
    }

    pub fn ingest_reader(&mut self, source: &str, reader: impl Read, converter: &dyn ExportConverter) -> Result<(IngestReport, Vec<crate::ingest::LineError>)> {
        let state = self.store.state();
        let known = |id: &str| state.messages.contains_key(id);
        let parsed = Ingestor {
            bot_author_ids: &state.config.bot_author_ids,
            known_ids: &known,
        }
        .parse(reader, converter)?;
        let mut events: Vec<Event> = parsed
            .messages
            .into_iter()
            .map(|message| Event::MessageIngested { message })
            .collect();
        events.push(Event::IngestRecorded {
            source: source.to_string(),
            report: parsed.report.clone(),
            at: Utc::now(),
        });
        self.store.append_all(events)?;
        Ok((parsed.report, parsed.errors))
    }

    /// Ingests a line-delimited export, writing `<path>.errors` for any
    /// malformed lines.
    pub fn ingest_file(&mut self, path: &Path) -> Result<IngestReport> {
        let file = File::open(path)?;
        let (report, errors) = self.ingest_reader(&path.display().to_string(), file, &JsonLines)?;
        write_error_sidecar(path, &errors)?;
        Ok(report)
    }

    /// Requests for every message without a `model_version` outcome for
    /// `task`, oldest first. Contribution requests carry their context.
    pub fn pending_requests(&self, task: TaskKind, model_version: &str) -> Result<Vec<ClassifyRequest>> {
        let state = self.state();
        let done = state
            .classifications
            .get(&task)
            .and_then(|m| m.get(model_version));
        let mut msgs: Vec<_> = state
            .messages
            .values()
            .filter(|m| done.map_or(true, |d| !d.contains_key(&m.message_id)))
            .collect();
        msgs.sort_by(|a, b| (a.timestamp, &a.message_id).cmp(&(b.timestamp, &b.message_id)));
        msgs.into_iter()
            .map(|m| {
                Ok(ClassifyRequest {
                    message_id: m.message_id.clone(),
                    task,
                    text: m.content.clone(),
                    context: if task == TaskKind::Contribution {
                        state.context_of(&m.message_id)?
                    } else {
                        Vec::new()
                    },
                })
            })
            .collect()
    }

    /// Records a finished (or suspended) batch: classifications, abstains,
    /// the moderation flags they trigger and the batch summary. Outcomes
    /// recorded by a concurrent run in the meantime are skipped.
    pub fn commit_batch(&mut self, run: &BatchRun, requests: &[ClassifyRequest]) -> Result<BatchSummary> {
        let state = self.store.state();
        let context_lens: std::collections::HashMap<&str, usize> =
            requests.iter().map(|r| (r.message_id.as_str(), r.context.len())).collect();
        let (tau_t, tau_s) = (state.config.tau_toxic, state.config.tau_spam);
        let mut events = Vec::with_capacity(run.outcomes.len() + 1);
        let mut flagged: BTreeSet<&str> = BTreeSet::new();
        let at = run.summary.finished_at;
        for outcome in &run.outcomes {
            let id = outcome.message_id();
            match outcome {
                Outcome::Classified(c) => {
                    if state.classification(c.task, &c.model_version, id).is_some() {
                        continue;
                    }
                    events.push(Event::ClassificationRecorded {
                        classification: c.clone(),
                        context_len: context_lens.get(id).copied().unwrap_or(0),
                    });
                }
                Outcome::Abstain(a) => events.push(Event::AbstainRecorded { abstain: a.clone(), at }),
            }
            if run.summary.task == TaskKind::Moderation {
                if let Some(draft) = policy_flag(outcome, tau_t, tau_s) {
                    if state.moderation.open_flag_for(id).is_none() && flagged.insert(id) {
                        events.push(Event::FlagRaised { draft, at });
                    }
                }
            }
        }
        events.push(Event::BatchRecorded { summary: run.summary.clone() });
        self.store.append_all(events)?;
        Ok(run.summary.clone())
    }

    /// Classifies every pending message for `task` and records the results.
    pub fn classify(&mut self, task: TaskKind, gateway: &Gateway, opts: &BatchOptions) -> Result<BatchSummary> {
        let requests = self.pending_requests(task, gateway.model_version())?;
        let run = gateway.run_batch(task, &requests, opts)?;
        let summary = self.commit_batch(&run, &requests)?;
        if let BatchStatus::Suspended { remaining } = summary.status {
            return Err(Error::BackendUnavailable(format!(
                "{} backend unavailable; batch {} suspended with {remaining} messages left (rerun to resume)",
                gateway.backend_id(),
                summary.run_id
            )));
        }
        Ok(summary)
    }

    pub fn personas(&self, filter: Option<Persona>, limit: usize, cursor: Option<&str>) -> PersonaPage {
        let book = &self.state().personas;
        let mut profiles: Vec<PersonaProfile> = book
            .profiles
            .values()
            .filter(|p| filter.map_or(true, |f| p.has(f)))
            .filter(|p| cursor.map_or(true, |c| p.author_id.as_str() > c))
            .take(limit.saturating_add(1))
            .cloned()
            .collect();
        let next = (profiles.len() > limit).then(|| {
            profiles.truncate(limit);
            profiles.last().map(|p| p.author_id.clone())
        });
        PersonaPage {
            report: book.composition_report(),
            profiles,
            next: next.flatten(),
        }
    }

    pub fn flags(&self, state: Option<FlagState>, limit: usize, cursor: Option<u64>) -> Page<Flag> {
        self.state().moderation.page(state, limit, cursor)
    }

    /// Records a verdict. A repeated idempotency key returns the flag as
    /// first decided without writing anything.
    pub fn decide_flag(&mut self, flag_id: &str, decision: FlagDecision, idempotency_key: Option<&str>) -> Result<Flag> {
        if let Some(key) = idempotency_key {
            if let Some(prior) = self.state().moderation.flag_for_idempotency_key(key) {
                if prior.flag_id != flag_id {
                    return Err(Error::conflict(format!("idempotency key {key:?} was used for {}", prior.flag_id)));
                }
                return Ok(prior.clone());
            }
        }
        self.store.append(Event::FlagDecided {
            flag_id: flag_id.to_string(),
            verdict: decision.verdict,
            moderator_id: decision.moderator_id,
            note: decision.note,
            label: decision.label,
            at: Utc::now(),
            idempotency_key: idempotency_key.map(str::to_string),
        })?;
        Ok(self.state().moderation.get(flag_id).expect("just decided").clone())
    }

    /// Queues a seeded sample of unflagged moderated messages as
    /// `needs_label` flags for a missed-violation spot check.
    pub fn false_negative_audit(&mut self, sample_size: usize, seed: u64) -> Result<Vec<Flag>> {
        let population = self.state().unflagged_moderated();
        let sample = false_negative_audit(&population, sample_size, seed);
        let at = Utc::now();
        let events: Vec<Event> = sample
            .iter()
            .map(|id| Event::FlagRaised {
                draft: FlagDraft {
                    message_id: id.clone(),
                    predicted_label: NEEDS_LABEL.to_string(),
                    scores: None,
                    origin: FlagOrigin::Audit,
                },
                at,
            })
            .collect();
        let range = self.store.append_all(events)?;
        Ok(range
            .filter_map(|seq| self.state().moderation.get(&format!("flag-{seq}")).cloned())
            .collect())
    }

    pub fn rewards(&self, state: Option<RewardState>) -> Vec<RewardRecommendation> {
        self.state()
            .contributions
            .rewards()
            .iter()
            .filter(|r| state.map_or(true, |s| r.state == s))
            .cloned()
            .collect()
    }

    pub fn decide_reward(&mut self, reward_id: &str, decision: RewardDecision, idempotency_key: Option<&str>) -> Result<RewardRecommendation> {
        if let Some(key) = idempotency_key {
            if let Some(prior) = self.state().contributions.reward_for_idempotency_key(key) {
                if prior.reward_id != reward_id {
                    return Err(Error::conflict(format!("idempotency key {key:?} was used for {}", prior.reward_id)));
                }
                return Ok(prior.clone());
            }
        }
        self.store.append(Event::RewardDecided {
            reward_id: reward_id.to_string(),
            verdict: decision.verdict,
            moderator_id: decision.moderator_id,
            at: Utc::now(),
            idempotency_key: idempotency_key.map(str::to_string),
        })?;
        Ok(self.state().contributions.reward(reward_id).expect("just decided").clone())
    }

    pub fn leaderboard(&self, limit: usize) -> Vec<LeaderboardEntry> {
        let state = self.state();
        state
            .contributions
            .leaderboard(limit)
            .into_iter()
            .map(|l| {
                let personas = state.personas.get(&l.author_id).map_or_else(Vec::new, |p| {
                    [(Persona::Crypto, "crypto"), (Persona::Fan, "fan"), (Persona::Casual, "casual")]
                        .into_iter()
                        .filter(|(k, _)| p.has(*k))
                        .map(|(_, n)| n.to_string())
                        .collect()
                });
                LeaderboardEntry {
                    author_id: l.author_id.clone(),
                    score: l.score,
                    rewarded_multiple: l.rewarded_multiple,
                    personas,
                }
            })
            .collect()
    }

    pub fn weights(&self) -> &Weights {
        &self.config().weights
    }

    /// Replaces the contribution weights; only events scored afterwards use
    /// the new values.
    pub fn set_weights(&mut self, weights: Weights) -> Result<CommunityConfig> {
        let config = set_weights(self.config(), weights)?;
        self.store.append(Event::ConfigReplaced { config })?;
        Ok(self.config().clone())
    }

    /// Sentiment counts per window over `[from, to)`.
    pub fn sentiment(
        &self,
        channel: Option<&str>,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        window: std::time::Duration,
    ) -> Result<Vec<SentimentBucket>> {
        if let (Some(f), Some(t)) = (from, to) {
            if f >= t {
                return Err(Error::validation("from must be before to"));
            }
        }
        let state = self.state();
        let obs: Vec<SentimentObservation> = state
            .primary(TaskKind::Sentiment)
            .filter_map(|c| {
                let m = state.messages.get(&c.message_id)?;
                let inside = from.map_or(true, |f| m.timestamp >= f) && to.map_or(true, |t| m.timestamp < t);
                inside.then(|| SentimentObservation {
                    channel_id: m.channel_id.clone(),
                    at: m.timestamp,
                    label: c.label.clone(),
                })
            })
            .collect();
        bucketize(&obs, window, channel, from, to)
    }

    pub fn add_examples(&mut self, examples: Vec<AnnotatedExample>) -> Result<usize> {
        let n = examples.len();
        self.store
            .append_all(examples.into_iter().map(|example| Event::ExampleAdded { example }).collect())?;
        Ok(n)
    }

    /// Test-split examples of `task` held in the store.
    pub fn test_examples(&self, task: TaskKind) -> Vec<AnnotatedExample> {
        self.state()
            .examples
            .values()
            .filter(|e| e.task == task && e.split == Split::Test)
            .cloned()
            .collect()
    }

    /// Classifies each example with `gateway`, evaluates against the gold
    /// labels and records the report.
    pub fn evaluate(&mut self, task: TaskKind, examples: &[AnnotatedExample], gateway: &Gateway) -> Result<EvaluationRecord> {
        let record = evaluate_examples(task, examples, gateway)?;
        self.record_evaluation(record.clone())?;
        Ok(record)
    }

    pub fn record_evaluation(&mut self, record: EvaluationRecord) -> Result<()> {
        self.store.append(Event::EvaluationRecorded { record })?;
        Ok(())
    }

    pub fn last_metrics(&self, task: TaskKind) -> Option<&EvaluationRecord> {
        self.state().evaluations.iter().rev().find(|r| r.task == task)
    }

    pub fn retraining_examples(&self, filter: &ExportFilter) -> Vec<AnnotatedExample> {
        self.state()
            .examples
            .values()
            .filter(|e| e.task == filter.task)
            .filter(|e| filter.source.map_or(true, |s| e.source == s))
            .filter(|e| match (filter.from, e.created_at) {
                (Some(f), Some(at)) => at >= f,
                (Some(_), None) => false,
                (None, _) => true,
            })
            .filter(|e| match (filter.to, e.created_at) {
                (Some(t), Some(at)) => at < t,
                (Some(_), None) => false,
                (None, _) => true,
            })
            .cloned()
            .collect()
    }

    /// Writes matching examples as line-delimited JSON into `dir`.
    pub fn export_retraining(&self, filter: &ExportFilter, dir: &Path) -> Result<RetrainingExport> {
        let examples = self.retraining_examples(filter);
        fs::create_dir_all(dir)?;
        let source = filter.source.map_or("all", |s| match s {
            ExampleSource::Human => "human",
            ExampleSource::Bootstrap => "bootstrap",
            ExampleSource::Curation => "curation",
        });
        let path = dir.join(format!("{}-{}-seq{}.jsonl", filter.task, source, self.store.seq()));
        let mut out = BufWriter::new(File::create(&path)?);
        crate::fixtures::write_examples(&examples, &mut out)?;
        out.flush()?;
        Ok(RetrainingExport {
            path,
            examples: examples.len() as u64,
        })
    }
}

/// Evaluation without recording: abstains are counted apart from the
/// confusion matrix.
pub fn evaluate_examples(task: TaskKind, examples: &[AnnotatedExample], gateway: &Gateway) -> Result<EvaluationRecord> {
    if examples.is_empty() {
        return Err(Error::validation(format!("no {task} test examples to evaluate")));
    }
    let mut pairs = Vec::with_capacity(examples.len());
    let mut abstained = 0;
    for e in examples {
        if e.task != task {
            return Err(Error::validation(format!("example {} is for {}, not {task}", e.example_id, e.task)));
        }
        e.validate()?;
        let res = gateway.classify(&ClassifyRequest {
            message_id: e.example_id.clone(),
            task,
            text: e.text.clone(),
            context: e.context.clone(),
        })?;
        match res.outcome {
            Outcome::Classified(c) => pairs.push((e.gold_label.clone(), c.label)),
            Outcome::Abstain(_) => abstained += 1,
        }
    }
    let report: EvaluationReport = evaluate(&confusion(pairs, task)?)?;
    Ok(EvaluationRecord {
        task,
        model_version: gateway.model_version().to_string(),
        split: Split::Test,
        report,
        abstained,
        at: Utc::now(),
    })
}

/// Reads line-delimited [`AnnotatedExample`] records.
pub fn read_examples(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
