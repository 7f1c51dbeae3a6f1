//! Proof-of-contribution scoring.
//!
//! Contribution labels carry moderator-tunable weights. Weighted events
//! accumulate per user into a [`ScoreLedger`], and every whole multiple of
//! the reward threshold the score crosses produces one reward
//! recommendation for a moderator to approve or reject.

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{validate_weights, Classification, CommunityConfig, TaskKind, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEvent {
    pub message_id: String,
    pub author_id: String,
    pub label: String,
    pub weight: f64,
    pub occurred_at: DateTime<Utc>,
}

/// Turns a contribution classification into a weighted event.
///
/// `context_len` is how many preceding messages the classifier saw and
/// `channel_has_history` whether any exist; classifying without context when
/// history exists is rejected. `na` produces no event.
pub fn score_contribution(
    classification: &Classification,
    author_id: &str,
    occurred_at: DateTime<Utc>,
    context_len: usize,
    channel_has_history: bool,
    weights: &Weights,
) -> Result<Option<ContributionEvent>> {
    if classification.task != TaskKind::Contribution {
        return Err(Error::validation(format!(
            "contribution scoring takes contribution classifications, got {}",
            classification.task
        )));
    }
    TaskKind::Contribution.validate_label(&classification.label)?;
    if channel_has_history && context_len == 0 {
        return Err(Error::validation(format!(
            "message {} was classified without its preceding context",
            classification.message_id
        )));
    }
    if classification.label == "na" {
        return Ok(None);
    }
    let weight = weights.get(&classification.label).copied().unwrap_or(0.0);
    Ok(Some(ContributionEvent {
        message_id: classification.message_id.clone(),
        author_id: author_id.to_string(),
        label: classification.label.clone(),
        weight,
        occurred_at,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLedger {
    pub author_id: String,
    pub score: f64,
    /// Highest reward multiple a moderator has approved.
    pub rewarded_multiple: u64,
    #[serde(default)]
    pub last_event_at: Option<DateTime<Utc>>,
    pub events: u64,
}

impl ScoreLedger {
    pub fn new(author_id: impl Into<String>) -> Self {
        ScoreLedger {
            author_id: author_id.into(),
            score: 0.0,
            rewarded_multiple: 0,
            last_event_at: None,
            events: 0,
        }
    }
}

/// Folds one event into a ledger, decaying the previous score by
/// `2^(-elapsed / half_life)` first when a half-life is configured.
pub fn accumulate(
    ledger: &ScoreLedger,
    event: &ContributionEvent,
    half_life: Option<Duration>,
) -> Result<ScoreLedger> {
    if event.author_id != ledger.author_id {
        return Err(Error::validation(format!(
            "event by {} cannot be added to the ledger of {}",
            event.author_id, ledger.author_id
        )));
    }
    let decay = match (half_life, ledger.last_event_at) {
        (Some(h), Some(last)) => {
            let elapsed = (event.occurred_at - last).num_milliseconds().max(0) as f64 / 1000.0;
            (-elapsed / h.as_secs_f64()).exp2()
        }
        _ => 1.0,
    };
    let mut next = ledger.clone();
    next.score = (ledger.score * decay + event.weight).max(0.0);
    next.last_event_at = Some(match ledger.last_event_at {
        Some(last) => last.max(event.occurred_at),
        None => event.occurred_at,
    });
    next.events += 1;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardState {
    Pending,
    Approved,
    Rejected,
}

impl std::str::FromStr for RewardState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(RewardState::Pending),
            "approved" => Ok(RewardState::Approved),
            "rejected" => Ok(RewardState::Rejected),
            other => Err(Error::validation(format!("unknown reward state {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVerdict {
    Approved,
    Rejected,
}

impl std::str::FromStr for RewardVerdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approved" | "approve" => Ok(RewardVerdict::Approved),
            "rejected" | "reject" => Ok(RewardVerdict::Rejected),
            other => Err(Error::validation(format!("unknown reward verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecommendation {
    pub reward_id: String,
    pub author_id: String,
    pub trigger_score: f64,
    pub multiple: u64,
    pub state: RewardState,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
}

/// Whole multiples of `threshold` reached by the ledger that still need a
/// recommendation. `blocked` lists multiples already pending or approved.
pub fn recommend_rewards(ledger: &ScoreLedger, threshold: f64, blocked: &[u64]) -> Vec<u64> {
    if !(threshold > 0.0) {
        return Vec::new();
    }
    // Guards against 0.1-step weights summing to 9.9999999 instead of 10.
    let reached = (ledger.score / threshold + 1e-9).floor() as u64;
    (ledger.rewarded_multiple + 1..=reached)
        .filter(|m| !blocked.contains(m))
        .collect()
}

/// Validates a replacement weight map and returns the updated config.
pub fn set_weights(config: &CommunityConfig, weights: Weights) -> Result<CommunityConfig> {
    validate_weights(&weights)?;
    let mut next = config.clone();
    next.weights = weights;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub author_id: String,
    pub score: f64,
    pub rewarded_multiple: u64,
    pub personas: Vec<String>,
}

/// Per-community contribution state: ledgers, the event history and reward
/// recommendations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionBook {
    pub ledgers: BTreeMap<String, ScoreLedger>,
    pub events: Vec<ContributionEvent>,
    rewards: Vec<RewardRecommendation>,
    reward_index: BTreeMap<String, usize>,
    idempotency: BTreeMap<String, String>,
}

impl ContributionBook {
    pub fn rewards(&self) -> &[RewardRecommendation] {
        &self.rewards
    }

    pub fn reward(&self, reward_id: &str) -> Option<&RewardRecommendation> {
        self.reward_index.get(reward_id).map(|&i| &self.rewards[i])
    }

    pub fn reward_for_idempotency_key(&self, key: &str) -> Option<&RewardRecommendation> {
        self.idempotency.get(key).and_then(|id| self.reward(id))
    }

    fn blocked_multiples(&self, author_id: &str) -> Vec<u64> {
        self.rewards
            .iter()
            .filter(|r| r.author_id == author_id && r.state != RewardState::Rejected)
            .map(|r| r.multiple)
            .collect()
    }

    /// Accumulates the event and emits recommendations in one step, so the
    /// same multiple can never be recommended twice.
    pub(crate) fn apply_event(
        &mut self,
        seq: u64,
        event: &ContributionEvent,
        half_life: Option<Duration>,
        threshold: f64,
    ) -> Result<Vec<String>> {
        let ledger = self
            .ledgers
            .get(&event.author_id)
            .cloned()
            .unwrap_or_else(|| ScoreLedger::new(&event.author_id));
        let next = accumulate(&ledger, event, half_life)?;
        let multiples = recommend_rewards(&next, threshold, &self.blocked_multiples(&event.author_id));
        let mut ids = Vec::with_capacity(multiples.len());
        for m in multiples {
            let reward_id = format!("reward-{seq}-{m}");
            self.reward_index.insert(reward_id.clone(), self.rewards.len());
            self.rewards.push(RewardRecommendation {
                reward_id: reward_id.clone(),
                author_id: event.author_id.clone(),
                trigger_score: next.score,
                multiple: m,
                state: RewardState::Pending,
                created_at: event.occurred_at,
                decided_by: None,
                decided_at: None,
            });
            ids.push(reward_id);
        }
        self.ledgers.insert(event.author_id.clone(), next);
        self.events.push(event.clone());
        Ok(ids)
    }

    pub fn check_decide(&self, reward_id: &str) -> Result<&RewardRecommendation> {
        let r = self
            .reward(reward_id)
            .ok_or_else(|| Error::not_found(format!("reward {reward_id}")))?;
        if r.state != RewardState::Pending {
            return Err(Error::conflict(format!(
                "reward {reward_id} was already decided ({:?})",
                r.state
            )));
        }
        Ok(r)
    }

    pub(crate) fn decide(
        &mut self,
        reward_id: &str,
        verdict: RewardVerdict,
        moderator_id: &str,
        at: DateTime<Utc>,
        idempotency_key: Option<&str>,
    ) -> &RewardRecommendation {
        let i = self.reward_index[reward_id];
        let r = &mut self.rewards[i];
        r.state = match verdict {
            RewardVerdict::Approved => RewardState::Approved,
            RewardVerdict::Rejected => RewardState::Rejected,
        };
        r.decided_by = Some(moderator_id.to_string());
        r.decided_at = Some(at);
        if verdict == RewardVerdict::Approved {
            if let Some(ledger) = self.ledgers.get_mut(&r.author_id) {
                ledger.rewarded_multiple = ledger.rewarded_multiple.max(r.multiple);
            }
        }
        if let Some(key) = idempotency_key {
            self.idempotency.insert(key.to_string(), reward_id.to_string());
        }
        &self.rewards[i]
    }

    /// Ledgers ordered by score, highest first; ties by author id.
    pub fn leaderboard(&self, limit: usize) -> Vec<&ScoreLedger> {
        let mut all: Vec<&ScoreLedger> = self.ledgers.values().collect();
        all.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.author_id.cmp(&b.author_id))
        });
        all.truncate(limit);
        all
    }
}
