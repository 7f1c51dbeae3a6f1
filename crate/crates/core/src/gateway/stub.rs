use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{BackendResponse, Capabilities, ClassifierBackend, ClassifyRequest, TransportError};
use crate::domain::{argmax_label, TaskKind};
use crate::error::{Error, Result};

const INTENT_RULES: &str = include_str!("../../data/rules/intent.tsv");
const MODERATION_RULES: &str = include_str!("../../data/rules/moderation.tsv");
const CONTRIBUTION_RULES: &str = include_str!("../../data/rules/contribution.tsv");
const SENTIMENT_RULES: &str = include_str!("../../data/rules/sentiment.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    pattern: String,
    prefix: bool,
    label: &'static str,
}

impl Rule {
    fn matches(&self, haystack: &str) -> bool {
        let bytes = haystack.as_bytes();
        let is_word = |i: usize| {
            haystack[i..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '_')
        };
        let is_word_before = |i: usize| {
            haystack[..i]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric() || c == '_')
        };
        let mut from = 0;
        while let Some(off) = haystack[from..].find(&self.pattern) {
            let start = from + off;
            let end = start + self.pattern.len();
            let left_ok = start == 0 || !is_word_before(start);
            let right_ok = self.prefix || end == bytes.len() || !is_word(end);
            if left_ok && right_ok {
                return true;
            }
            from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
        }
        false
    }
}

/// Keyword rules for one task: `pattern<TAB>label` per line, `#` comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    task: TaskKind,
    rules: Vec<Rule>,
}

impl RuleTable {
    pub fn parse(task: TaskKind, text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (pattern, label) = line.split_once('\t').ok_or_else(|| {
                Error::validation(format!("{task} rules line {}: expected pattern<TAB>label", i + 1))
            })?;
            let label = task
                .labels()
                .iter()
                .find(|l| **l == label.trim())
                .ok_or_else(|| {
                    Error::validation(format!("{task} rules line {}: unknown label {label:?}", i + 1))
                })?;
            let pattern = pattern.trim().to_lowercase();
            let (pattern, prefix) = match pattern.strip_suffix('*') {
                Some(p) => (p.to_string(), true),
                None => (pattern, false),
            };
            if pattern.is_empty() {
                return Err(Error::validation(format!("{task} rules line {}: empty pattern", i + 1)));
            }
            rules.push(Rule { pattern, prefix, label });
        }
        Ok(RuleTable { task, rules })
    }

    pub fn builtin(task: TaskKind) -> Self {
        let text = match task {
            TaskKind::Intent => INTENT_RULES,
            TaskKind::Moderation => MODERATION_RULES,
            TaskKind::Contribution => CONTRIBUTION_RULES,
            TaskKind::Sentiment => SENTIMENT_RULES,
        };
        Self::parse(task, text).expect("bundled rule tables are valid")
    }

    /// Share of matching rules per label. No match puts all mass on the
    /// task's default label.
    pub fn scores(&self, text: &str) -> BTreeMap<String, f64> {
        let lowered = text.to_lowercase();
        let mut hits: BTreeMap<&str, u32> = BTreeMap::new();
        for rule in &self.rules {
            if rule.matches(&lowered) {
                *hits.entry(rule.label).or_insert(0) += 1;
            }
        }
        let total: u32 = hits.values().sum();
        self.task
            .labels()
            .iter()
            .map(|l| {
                let score = if total == 0 {
                    if *l == self.task.default_label() { 1.0 } else { 0.0 }
                } else {
                    f64::from(hits.get(l).copied().unwrap_or(0)) / f64::from(total)
                };
                (l.to_string(), score)
            })
            .collect()
    }

    pub fn classify(&self, text: &str) -> &'static str {
        argmax_label(self.task, &self.scores(text)).expect("scores cover every label")
    }
}

/// Deterministic offline backend driven by keyword rule tables.
#[derive(Debug, Clone)]
pub struct StubBackend {
    tables: BTreeMap<TaskKind, RuleTable>,
    model_version: String,
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::builtin()
    }
}

impl StubBackend {
    pub fn builtin() -> Self {
        StubBackend {
            tables: TaskKind::ALL.iter().map(|t| (*t, RuleTable::builtin(*t))).collect(),
            model_version: "stub-rules-v1".to_string(),
        }
    }

    /// Loads `<task>.tsv` files from `dir`, falling back to the bundled
    /// table for any task without a file.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut stub = Self::builtin();
        for task in TaskKind::ALL {
            let path = dir.join(format!("{task}.tsv"));
            if path.exists() {
                let text = fs::read_to_string(&path)?;
                stub.tables.insert(task, RuleTable::parse(task, &text)?);
            }
        }
        Ok(stub)
    }

    pub fn with_model_version(mut self, version: impl Into<String>) -> Self {
        self.model_version = version.into();
        self
    }

    pub fn table(&self, task: TaskKind) -> &RuleTable {
        &self.tables[&task]
    }
}

impl ClassifierBackend for StubBackend {
    fn backend_id(&self) -> &str {
        "stub"
    }

    fn model_version(&self) -> &str {
        &self.model_version
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { returns_scores: true }
    }

    fn complete(&self, request: &ClassifyRequest, _prompt: &str) -> Result<BackendResponse, TransportError> {
        let table = self.table(request.task);
        let scores = table.scores(&request.text);
        let label = argmax_label(request.task, &scores).expect("scores cover every label");
        Ok(BackendResponse {
            raw: label.to_string(),
            scores: Some(scores),
            total_tokens: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_boundaries() {
        let t = RuleTable::parse(TaskKind::Intent, "gm\tcasual\nnft*\tcrypto\n").unwrap();
        assert_eq!(t.classify("GM frens"), "casual");
        assert_eq!(t.classify("enigma"), "casual"); // default, not a gm hit
        assert_eq!(t.scores("enigma")["casual"], 1.0);
        assert_eq!(t.classify("my nfts"), "crypto");
        assert_eq!(t.classify("gm, any nft news?"), "crypto"); // tie → label order
    }

    #[test]
    fn bundled_rules_cover_known_exemplars() {
        let stub = StubBackend::builtin();
        assert_eq!(stub.table(TaskKind::Intent).classify("when is the next airdrop dropping?"), "crypto");
        let s = stub.table(TaskKind::Sentiment);
        assert_eq!(s.classify("Hey that was a great game!"), "positive");
        assert_eq!(s.classify("Yeah that's just the way it is."), "neutral");
        assert_eq!(s.classify("Man that sucked"), "negative");
    }

    #[test]
    fn bad_table_lines_are_rejected() {
        assert!(RuleTable::parse(TaskKind::Intent, "no tab here").is_err());
        assert!(RuleTable::parse(TaskKind::Intent, "x\tmeme").is_err());
        assert!(RuleTable::parse(TaskKind::Intent, "# comment only\n\n").unwrap().rules.is_empty());
    }

    #[test]
    fn scores_are_a_distribution() {
        let t = RuleTable::builtin(TaskKind::Moderation);
        let s = t.scores("shut up you idiot lol");
        let sum: f64 = s.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((s["toxic"] - 2.0 / 3.0).abs() < 1e-12);
    }
}
