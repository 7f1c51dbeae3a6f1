//! Shared domain records and the closed label taxonomies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pseudonymous chat message as exported from the community forum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: String,
    pub channel_id: String,
    pub channel_name: String,
    pub author_id: String,
    pub author_name: String,
    pub timestamp: DateTime<Utc>,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<String>,
}

impl ChatMessage {
    /// Whitespace-only content counts as empty. The stored content is never trimmed.
    pub fn is_empty(&self) -> bool {
        self.content.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Intent,
    Moderation,
    Contribution,
    Sentiment,
}

const INTENT_LABELS: &[&str] = &["crypto", "fan", "casual"];
const MODERATION_LABELS: &[&str] = &["toxic", "spam", "not_toxic_not_spam"];
const CONTRIBUTION_LABELS: &[&str] = &[
    "na",
    "onboarding",
    "knowledge_tcg",
    "knowledge_fan",
    "knowledge_crypto",
    "content",
    "moderation",
    "suggestion",
];
const SENTIMENT_LABELS: &[&str] = &["positive", "neutral", "negative"];

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Intent,
        TaskKind::Moderation,
        TaskKind::Contribution,
        TaskKind::Sentiment,
    ];

    /// The closed, ordered label set of this task. Order drives report rows
    /// and argmax tie-breaking.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            TaskKind::Intent => INTENT_LABELS,
            TaskKind::Moderation => MODERATION_LABELS,
            TaskKind::Contribution => CONTRIBUTION_LABELS,
            TaskKind::Sentiment => SENTIMENT_LABELS,
        }
    }

    pub fn label_index(self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }

    pub fn contains(self, label: &str) -> bool {
        self.label_index(label).is_some()
    }

    pub fn validate_label(self, label: &str) -> Result<()> {
        if self.contains(label) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "label {label:?} is not in the {self} label set {:?}",
                self.labels()
            )))
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Intent => "intent",
            TaskKind::Moderation => "moderation",
            TaskKind::Contribution => "contribution",
            TaskKind::Sentiment => "sentiment",
        }
    }

    /// Label used when a rule table has no opinion about a message.
    pub fn default_label(self) -> &'static str {
        match self {
            TaskKind::Intent => "casual",
            TaskKind::Moderation => "not_toxic_not_spam",
            TaskKind::Contribution => "na",
            TaskKind::Sentiment => "neutral",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intent" => Ok(TaskKind::Intent),
            "moderation" => Ok(TaskKind::Moderation),
            "contribution" => Ok(TaskKind::Contribution),
            "sentiment" => Ok(TaskKind::Sentiment),
            other => Err(Error::validation(format!("unknown task {other:?}"))),
        }
    }
}

/// Picks the highest-scoring label; ties go to the label listed first in the task's set.
pub fn argmax_label(task: TaskKind, scores: &BTreeMap<String, f64>) -> Option<&'static str> {
    let mut best: Option<(&'static str, f64)> = None;
    for label in task.labels() {
        let Some(&score) = scores.get(*label) else {
            continue;
        };
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((label, score)),
        }
    }
    best.map(|(l, _)| l)
}

/// One-hot score map used when a backend only returns a label.
pub fn one_hot(task: TaskKind, label: &str) -> BTreeMap<String, f64> {
    task.labels()
        .iter()
        .map(|l| (l.to_string(), if *l == label { 1.0 } else { 0.0 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub message_id: String,
    pub task: TaskKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    pub backend_id: String,
    pub model_version: String,
    pub created_at: DateTime<Utc>,
}

impl Classification {
    pub fn validate(&self) -> Result<()> {
        self.task.validate_label(&self.label)?;
        if let Some(scores) = &self.scores {
            for (label, score) in scores {
                self.task.validate_label(label)?;
                if !(0.0..=1.0).contains(score) || score.is_nan() {
                    return Err(Error::validation(format!(
                        "score for {label:?} is {score}, outside [0, 1]"
                    )));
                }
            }
            if argmax_label(self.task, scores) != Some(self.label.as_str()) {
                return Err(Error::validation(format!(
                    "label {:?} is not the argmax of its scores",
                    self.label
                )));
            }
        }
        Ok(())
    }

    /// Score for `label`, falling back to one-hot on the chosen label.
    pub fn score(&self, label: &str) -> f64 {
        match &self.scores {
            Some(s) => s.get(label).copied().unwrap_or(0.0),
            None if self.label == label => 1.0,
            None => 0.0,
        }
    }

    pub fn key(&self) -> ClassificationKey {
        ClassificationKey {
            message_id: self.message_id.clone(),
            task: self.task,
            model_version: self.model_version.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassificationKey {
    pub message_id: String,
    pub task: TaskKind,
    pub model_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    Human,
    Bootstrap,
    Curation,
}

/// A human gold label for one text, used for evaluation and retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub example_id: String,
    pub text: String,
    #[serde(default)]
    pub context: Vec<String>,
    pub task: TaskKind,
    pub gold_label: String,
    pub annotator_ids: Vec<String>,
    pub split: Split,
    pub source: ExampleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

impl AnnotatedExample {
    pub fn validate(&self) -> Result<()> {
        self.task.validate_label(&self.gold_label)?;
        if self.annotator_ids.is_empty() {
            return Err(Error::validation(format!(
                "example {} has no annotators",
                self.example_id
            )));
        }
        if self.context.len() > 2 {
            return Err(Error::validation(format!(
                "example {} carries {} context messages, at most 2 allowed",
                self.example_id,
                self.context.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    #[default]
    CharsDiv4,
    Whitespace,
}

/// Contribution weight per contribution label.
pub type Weights = BTreeMap<String, f64>;

pub fn default_weights() -> Weights {
    [
        ("na", 0.0),
        ("onboarding", 2.0),
        ("knowledge_tcg", 2.0),
        ("knowledge_fan", 2.0),
        ("knowledge_crypto", 2.0),
        ("content", 3.0),
        ("moderation", 3.0),
        ("suggestion", 1.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn validate_weights(weights: &Weights) -> Result<()> {
    for (label, w) in weights {
        TaskKind::Contribution.validate_label(label)?;
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::validation(format!(
                "weight for {label:?} must be a non-negative number, got {w}"
            )));
        }
    }
    for label in TaskKind::Contribution.labels() {
        if !weights.contains_key(*label) {
            return Err(Error::validation(format!("missing weight for {label:?}")));
        }
    }
    if weights["na"] != 0.0 {
        return Err(Error::validation("weight for \"na\" must stay 0"));
    }
    Ok(())
}

/// Per-community tuning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommunityConfig {
    pub community_id: String,
    pub bot_author_ids: BTreeSet<String>,
    pub persona_threshold: u32,
    pub tau_toxic: f64,
    pub tau_spam: f64,
    pub weights: Weights,
    pub reward_threshold: f64,
    #[serde(with = "opt_secs", skip_serializing_if = "Option::is_none")]
    pub decay_half_life: Option<Duration>,
    pub tokenizer: Tokenizer,
    pub price_per_1k_tokens: f64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig {
            community_id: "default".to_string(),
            bot_author_ids: BTreeSet::new(),
            persona_threshold: 3,
            tau_toxic: 0.3,
            tau_spam: 0.5,
            weights: default_weights(),
            reward_threshold: 10.0,
            decay_half_life: None,
            tokenizer: Tokenizer::CharsDiv4,
            price_per_1k_tokens: 0.0004,
        }
    }
}

impl CommunityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persona_threshold < 1 {
            return Err(Error::validation("persona_threshold must be at least 1"));
        }
        for (name, tau) in [("tau_toxic", self.tau_toxic), ("tau_spam", self.tau_spam)] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::validation(format!("{name} must lie in [0, 1]")));
            }
        }
        validate_weights(&self.weights)?;
        if !(self.reward_threshold > 0.0) {
            return Err(Error::validation("reward_threshold must be positive"));
        }
        if let Some(h) = self.decay_half_life {
            if h.is_zero() {
                return Err(Error::validation("decay_half_life must be positive"));
            }
        }
        if !(self.price_per_1k_tokens >= 0.0) {
            return Err(Error::validation("price_per_1k_tokens must be non-negative"));
        }
        Ok(())
    }
}

/// Durations as fractional seconds on the wire.
mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_f64(d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let secs = Option::<f64>::deserialize(d)?;
        match secs {
            Some(s) if s.is_finite() && s >= 0.0 => Ok(Some(Duration::from_secs_f64(s))),
            Some(s) => Err(serde::de::Error::custom(format!("invalid duration {s}"))),
            None => Ok(None),
        }
    }
}
