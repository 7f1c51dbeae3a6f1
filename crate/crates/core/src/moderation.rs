//! Flag-for-curation moderation queue.
//!
//! Flags only ever recommend; nothing here deletes or mutes. Thresholds are
//! asymmetric so that toxic messages are flagged at a lower score than spam,
//! trading extra moderator reviews for fewer missed toxic messages.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::TaskKind;
use crate::error::{Error, Result};
use crate::gateway::Outcome;

pub const NEEDS_LABEL: &str = "needs_label";
pub const CLEAN: &str = "not_toxic_not_spam";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagState {
    Pending,
    Upheld,
    Overturned,
}

impl std::str::FromStr for FlagState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(FlagState::Pending),
            "upheld" => Ok(FlagState::Upheld),
            "overturned" => Ok(FlagState::Overturned),
            other => Err(Error::validation(format!("unknown flag state {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Upheld,
    Overturned,
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upheld" | "uphold" => Ok(Verdict::Upheld),
            "overturned" | "overturn" => Ok(Verdict::Overturned),
            other => Err(Error::validation(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagOrigin {
    Policy,
    Abstain,
    Audit,
}

/// What the policy wants flagged, before the store assigns an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagDraft {
    pub message_id: String,
    pub predicted_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    pub origin: FlagOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub flag_id: String,
    /// Sequence number of the event that raised the flag; doubles as the page cursor.
    pub seq: u64,
    pub message_id: String,
    pub predicted_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    pub origin: FlagOrigin,
    pub state: FlagState,
    pub raised_at: DateTime<Utc>,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub gold_label: Option<String>,
}

/// Applies the moderation threshold policy to one classifier outcome.
///
/// With scores, a flag is raised when either the toxic or the spam score
/// reaches its threshold; the higher-scoring of the two becomes the
/// predicted label. Label-only outputs are flagged when the label is toxic
/// or spam. Abstains always become `needs_label` flags.
pub fn policy_flag(outcome: &Outcome, tau_toxic: f64, tau_spam: f64) -> Option<FlagDraft> {
    match outcome {
        Outcome::Abstain(a) => {
            if a.task != TaskKind::Moderation {
                return None;
            }
            Some(FlagDraft {
                message_id: a.message_id.clone(),
                predicted_label: NEEDS_LABEL.to_string(),
                scores: None,
                origin: FlagOrigin::Abstain,
            })
        }
        Outcome::Classified(c) => {
            if c.task != TaskKind::Moderation {
                return None;
            }
            let predicted = match &c.scores {
                Some(_) => {
                    let toxic = c.score("toxic");
                    let spam = c.score("spam");
                    let toxic_hit = toxic >= tau_toxic;
                    let spam_hit = spam >= tau_spam;
                    match (toxic_hit, spam_hit) {
                        (true, true) if spam > toxic => "spam",
                        (true, _) => "toxic",
                        (false, true) => "spam",
                        (false, false) => return None,
                    }
                }
                None => match c.label.as_str() {
                    "toxic" => "toxic",
                    "spam" => "spam",
                    _ => return None,
                },
            };
            Some(FlagDraft {
                message_id: c.message_id.clone(),
                predicted_label: predicted.to_string(),
                scores: c.scores.clone(),
                origin: FlagOrigin::Policy,
            })
        }
    }
}

/// Gold label a verdict produces for the retraining set.
///
/// `needs_label` flags carry no prediction, so upholding one requires the
/// moderator to name the label (`toxic` or `spam`).
pub fn curation_gold(flag: &Flag, verdict: Verdict, label: Option<&str>) -> Result<String> {
    match verdict {
        Verdict::Overturned => Ok(CLEAN.to_string()),
        Verdict::Upheld if flag.predicted_label != NEEDS_LABEL => {
            Ok(flag.predicted_label.clone())
        }
        Verdict::Upheld => match label {
            Some(l @ ("toxic" | "spam")) => Ok(l.to_string()),
            Some(other) => Err(Error::validation(format!(
                "upholding a needs_label flag takes toxic or spam, got {other:?}"
            ))),
            None => Err(Error::validation(
                "upholding a needs_label flag requires a label",
            )),
        },
    }
}

/// Every flag ever raised, in raise order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModerationQueue {
    flags: Vec<Flag>,
    by_id: BTreeMap<String, usize>,
    open_by_message: BTreeMap<String, String>,
    idempotency: BTreeMap<String, String>,
}

impl ModerationQueue {
    pub fn get(&self, flag_id: &str) -> Option<&Flag> {
        self.by_id.get(flag_id).map(|&i| &self.flags[i])
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }

    pub fn open_flag_for(&self, message_id: &str) -> Option<&Flag> {
        self.open_by_message.get(message_id).and_then(|id| self.get(id))
    }

    pub fn flag_for_idempotency_key(&self, key: &str) -> Option<&Flag> {
        self.idempotency.get(key).and_then(|id| self.get(id))
    }

    pub fn check_raise(&self, draft: &FlagDraft) -> Result<()> {
        if self.open_by_message.contains_key(&draft.message_id) {
            return Err(Error::conflict(format!(
                "message {} already has a pending flag",
                draft.message_id
            )));
        }
        Ok(())
    }

    pub(crate) fn raise(&mut self, seq: u64, draft: &FlagDraft, at: DateTime<Utc>) -> &Flag {
        let flag_id = format!("flag-{seq}");
        let flag = Flag {
            flag_id: flag_id.clone(),
            seq,
            message_id: draft.message_id.clone(),
            predicted_label: draft.predicted_label.clone(),
            scores: draft.scores.clone(),
            origin: draft.origin,
            state: FlagState::Pending,
            raised_at: at,
            decided_by: None,
            decided_at: None,
            note: None,
            gold_label: None,
        };
        self.open_by_message
            .insert(flag.message_id.clone(), flag_id.clone());
        self.by_id.insert(flag_id, self.flags.len());
        self.flags.push(flag);
        self.flags.last().expect("just pushed")
    }

    pub fn check_decide(&self, flag_id: &str) -> Result<&Flag> {
        let flag = self
            .get(flag_id)
            .ok_or_else(|| Error::not_found(format!("flag {flag_id}")))?;
        if flag.state != FlagState::Pending {
            return Err(Error::conflict(format!(
                "flag {flag_id} was already decided ({:?})",
                flag.state
            )));
        }
        Ok(flag)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decide(
        &mut self,
        flag_id: &str,
        verdict: Verdict,
        gold: String,
        moderator_id: &str,
        note: Option<String>,
        at: DateTime<Utc>,
        idempotency_key: Option<&str>,
    ) -> &Flag {
        let i = self.by_id[flag_id];
        let flag = &mut self.flags[i];
        flag.state = match verdict {
            Verdict::Upheld => FlagState::Upheld,
            Verdict::Overturned => FlagState::Overturned,
        };
        flag.decided_by = Some(moderator_id.to_string());
        flag.decided_at = Some(at);
        flag.note = note;
        flag.gold_label = Some(gold);
        self.open_by_message.remove(&flag.message_id);
        if let Some(key) = idempotency_key {
            self.idempotency.insert(key.to_string(), flag_id.to_string());
        }
        &self.flags[i]
    }

    /// Page of flags in raise order, starting after `cursor`.
    pub fn page(&self, state: Option<FlagState>, limit: usize, cursor: Option<u64>) -> Page<Flag> {
        let items: Vec<&Flag> = self
            .flags
            .iter()
            .filter(|f| cursor.map_or(true, |c| f.seq > c))
            .filter(|f| state.map_or(true, |s| f.state == s))
            .take(limit.saturating_add(1))
            .collect();
        let more = items.len() > limit;
        let items: Vec<Flag> = items.into_iter().take(limit).cloned().collect();
        let next = if more { items.last().map(|f| f.seq) } else { None };
        Page { items, next }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub next: Option<u64>,
}

/// Seeded uniform sample (without replacement) of unflagged messages for a
/// human spot-check of missed toxic or spam messages.
pub fn false_negative_audit(population: &[String], sample_size: usize, rng_seed: u64) -> Vec<String> {
    if sample_size >= population.len() {
        return population.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rand::seq::index::sample(&mut rng, population.len(), sample_size)
        .into_iter()
        .map(|i| population[i].clone())
        .collect()
}
