//! User-level personas derived from message-level intent labels.
//!
//! A user is a Crypto Enthusiast once `k` of their messages are labelled
//! `crypto`, and a Fan once `k` are labelled `fan`. Both flags may hold at
//! once. Casual is the exclusive default: neither of the other two.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{Classification, ClassificationKey, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub author_id: String,
    pub counts: BTreeMap<String, u64>,
    pub is_crypto_enthusiast: bool,
    pub is_fan: bool,
    pub is_casual: bool,
    pub last_updated: DateTime<Utc>,
}

impl PersonaProfile {
    pub fn new(author_id: impl Into<String>, at: DateTime<Utc>) -> Self {
        PersonaProfile {
            author_id: author_id.into(),
            counts: BTreeMap::new(),
            is_crypto_enthusiast: false,
            is_fan: false,
            is_casual: true,
            last_updated: at,
        }
    }

    pub fn count(&self, label: &str) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }

    fn recompute(&mut self, k: u32) {
        self.is_crypto_enthusiast = self.count("crypto") >= u64::from(k);
        self.is_fan = self.count("fan") >= u64::from(k);
        self.is_casual = !self.is_crypto_enthusiast && !self.is_fan;
    }

    pub fn has(&self, persona: Persona) -> bool {
        match persona {
            Persona::Crypto => self.is_crypto_enthusiast,
            Persona::Fan => self.is_fan,
            Persona::Casual => self.is_casual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    Crypto,
    Fan,
    Casual,
}

impl std::str::FromStr for Persona {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crypto" => Ok(Persona::Crypto),
            "fan" => Ok(Persona::Fan),
            "casual" => Ok(Persona::Casual),
            other => Err(Error::validation(format!("unknown persona {other:?}"))),
        }
    }
}

/// All profiles of one community plus the set of intent classifications
/// already tallied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaBook {
    pub threshold: u32,
    pub profiles: BTreeMap<String, PersonaProfile>,
    seen: BTreeSet<ClassificationKey>,
}

impl Default for PersonaBook {
    fn default() -> Self {
        PersonaBook::new(3)
    }
}

impl PersonaBook {
    pub fn new(threshold: u32) -> Self {
        PersonaBook {
            threshold: threshold.max(1),
            profiles: BTreeMap::new(),
            seen: BTreeSet::new(),
        }
    }

    /// Tallies one intent classification for `author_id`. Re-submitting the
    /// same (message, task, model version) leaves the profile untouched.
    pub fn update_profile(
        &mut self,
        author_id: &str,
        classification: &Classification,
    ) -> Result<&PersonaProfile> {
        if classification.task != TaskKind::Intent {
            return Err(Error::validation(format!(
                "persona profiles take intent classifications, got {}",
                classification.task
            )));
        }
        TaskKind::Intent.validate_label(&classification.label)?;
        let k = self.threshold;
        let fresh = self.seen.insert(classification.key());
        let profile = self
            .profiles
            .entry(author_id.to_string())
            .or_insert_with(|| PersonaProfile::new(author_id, classification.created_at));
        if fresh {
            *profile.counts.entry(classification.label.clone()).or_insert(0) += 1;
            profile.last_updated = profile.last_updated.max(classification.created_at);
            profile.recompute(k);
        }
        Ok(profile)
    }

    pub fn get(&self, author_id: &str) -> Option<&PersonaProfile> {
        self.profiles.get(author_id)
    }

    pub fn composition_report(&self) -> CompositionReport {
        let mut report = CompositionReport::default();
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        for p in self.profiles.values() {
            report.active_users += 1;
            report.n_crypto += u64::from(p.is_crypto_enthusiast);
            report.n_fan += u64::from(p.is_fan);
            report.n_casual += u64::from(p.is_casual);
            report.n_crypto_and_fan += u64::from(p.is_crypto_enthusiast && p.is_fan);
            for (label, n) in &p.counts {
                *totals.entry(label.clone()).or_insert(0) += n;
            }
        }
        let total_messages: u64 = totals.values().sum();
        report.message_distribution = TaskKind::Intent
            .labels()
            .iter()
            .map(|l| {
                let n = totals.get(*l).copied().unwrap_or(0);
                let frac = if total_messages == 0 {
                    0.0
                } else {
                    n as f64 / total_messages as f64
                };
                (l.to_string(), frac)
            })
            .collect();
        report.pct_crypto = percent_half_up(report.n_crypto, report.active_users);
        report.pct_fan = percent_half_up(report.n_fan, report.active_users);
        report.pct_casual = percent_half_up(report.n_casual, report.active_users);
        report
    }
}

/// Integer percent of `part / whole`, rounded half-up; 0 for an empty whole.
pub fn percent_half_up(part: u64, whole: u64) -> u64 {
    if whole == 0 {
        return 0;
    }
    (200 * part + whole) / (2 * whole)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub active_users: u64,
    pub n_crypto: u64,
    pub n_fan: u64,
    pub n_casual: u64,
    /// Users carrying both the crypto and the fan flag.
    pub n_crypto_and_fan: u64,
    pub pct_crypto: u64,
    pub pct_fan: u64,
    pub pct_casual: u64,
    pub message_distribution: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intent(msg: &str, label: &str) -> Classification {
        Classification {
            message_id: msg.into(),
            task: TaskKind::Intent,
            label: label.into(),
            scores: None,
            backend_id: "stub".into(),
            model_version: "v1".into(),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn one_crypto_message_stays_casual() {
        let mut book = PersonaBook::new(3);
        let p = book.update_profile("u", &intent("m1", "crypto")).unwrap();
        assert_eq!(p.count("crypto"), 1);
        assert!(p.is_casual && !p.is_crypto_enthusiast);
    }

    #[test]
    fn third_crypto_message_crosses_threshold() {
        let mut book = PersonaBook::new(3);
        book.update_profile("u", &intent("m1", "crypto")).unwrap();
        book.update_profile("u", &intent("m2", "crypto")).unwrap();
        let p = book.update_profile("u", &intent("m3", "crypto")).unwrap();
        assert!(p.is_crypto_enthusiast);
        assert!(!p.is_casual);
    }

    #[test]
    fn crypto_and_fan_overlap() {
        let mut book = PersonaBook::new(3);
        for i in 0..3 {
            book.update_profile("u", &intent(&format!("c{i}"), "crypto")).unwrap();
            book.update_profile("u", &intent(&format!("f{i}"), "fan")).unwrap();
        }
        let p = book.get("u").unwrap();
        assert!(p.is_crypto_enthusiast && p.is_fan && !p.is_casual);
    }

    #[test]
    fn resubmission_is_idempotent() {
        let mut book = PersonaBook::new(3);
        let c = intent("m1", "crypto");
        for _ in 0..5 {
            book.update_profile("u", &c).unwrap();
        }
        assert_eq!(book.get("u").unwrap().count("crypto"), 1);
    }

    #[test]
    fn non_intent_is_rejected() {
        let mut book = PersonaBook::new(3);
        let mut c = intent("m1", "positive");
        c.task = TaskKind::Sentiment;
        assert!(matches!(book.update_profile("u", &c), Err(Error::Validation(_))));
    }

    #[test]
    fn report_on_two_users() {
        let mut book = PersonaBook::new(3);
        for i in 0..3 {
            book.update_profile("a", &intent(&format!("a{i}"), "crypto")).unwrap();
        }
        book.update_profile("b", &intent("b0", "fan")).unwrap();
        let r = book.composition_report();
        assert_eq!((r.active_users, r.n_crypto, r.n_fan, r.n_casual), (2, 1, 0, 1));
    }

    #[test]
    fn empty_report_is_zero() {
        let r = PersonaBook::new(3).composition_report();
        assert_eq!(r.active_users, 0);
        assert_eq!(r.pct_casual, 0);
        assert!(r.message_distribution.values().all(|f| *f == 0.0));
    }

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(percent_half_up(343, 1121), 31);
        assert_eq!(percent_half_up(243, 1121), 22);
        assert_eq!(percent_half_up(716, 1121), 64);
        assert_eq!(percent_half_up(1, 8), 13);
    }
}
