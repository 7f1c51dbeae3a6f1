use serde::{Deserialize, Serialize};

use crate::domain::{AnnotatedExample, ExampleSource, Split, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub text: String,
    #[serde(default)]
    pub context: Vec<String>,
    pub label: String,
}

/// Completion prompt for one task. The full label set is always listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: TaskKind,
    pub instruction: String,
    pub few_shot: Vec<FewShot>,
    pub include_context: bool,
}

impl PromptTemplate {
    pub fn default_for(task: TaskKind) -> Self {
        let instruction = match task {
            TaskKind::Intent => {
                "Classify the intent of this community chat message: crypto (trading, tokens, \
                 wallets, NFT prices), fan (the game universe, its story and characters) or \
                 casual (everyday chatter)."
            }
            TaskKind::Moderation => {
                "Classify this community chat message as toxic (insulting, harassing, hateful), \
                 spam (unsolicited promotion, scams, link bait) or not_toxic_not_spam."
            }
            TaskKind::Contribution => {
                "Given the two preceding messages as context, classify the contribution the \
                 final message makes to the community, or na if it makes none."
            }
            TaskKind::Sentiment => {
                "Classify the sentiment of this community chat message: positive (excitement, \
                 happiness), negative (disappointment, sadness) or neutral (no emotional or \
                 opinionated content)."
            }
        };
        PromptTemplate {
            task,
            instruction: instruction.to_string(),
            few_shot: Vec::new(),
            include_context: task == TaskKind::Contribution,
        }
    }

    /// Adds human-labelled training examples of this task as few-shot demonstrations.
    pub fn with_examples<'a>(mut self, examples: impl IntoIterator<Item = &'a AnnotatedExample>, limit: usize) -> Self {
        let task = self.task;
        self.few_shot.extend(
            examples
                .into_iter()
                .filter(|e| e.task == task && e.source == ExampleSource::Human && e.split == Split::Train)
                .take(limit)
                .map(|e| FewShot {
                    text: e.text.clone(),
                    context: e.context.clone(),
                    label: e.gold_label.clone(),
                }),
        );
        self
    }

    pub fn render(&self, text: &str, context: &[String]) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction);
        out.push_str("\nAnswer with exactly one label from: ");
        out.push_str(&self.task.labels().join(", "));
        out.push_str("\n\n");
        for shot in &self.few_shot {
            self.push_block(&mut out, &shot.text, &shot.context);
            out.push(' ');
            out.push_str(&shot.label);
            out.push_str("\n\n");
        }
        self.push_block(&mut out, text, context);
        out
    }

    fn push_block(&self, out: &mut String, text: &str, context: &[String]) {
        if self.include_context {
            for (i, c) in context.iter().enumerate() {
                out.push_str(&format!("Context {}: {}\n", i + 1, c));
            }
        }
        out.push_str("Message: ");
        out.push_str(text);
        out.push_str("\nLabel:");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_prompt_lists_all_labels() {
        for task in TaskKind::ALL {
            let p = PromptTemplate::default_for(task).render("hello", &[]);
            for label in task.labels() {
                assert!(p.contains(label), "{task} prompt misses {label}");
            }
        }
    }

    #[test]
    fn only_contribution_includes_context() {
        let ctx = vec!["what deck should I build?".to_string()];
        let c = PromptTemplate::default_for(TaskKind::Contribution).render("try daleks", &ctx);
        assert!(c.contains("Context 1: what deck should I build?"));
        let i = PromptTemplate::default_for(TaskKind::Intent).render("try daleks", &ctx);
        assert!(!i.contains("Context 1"));
    }

    #[test]
    fn few_shot_uses_human_train_examples_only() {
        let mk = |id: &str, source, split| AnnotatedExample {
            example_id: id.into(),
            text: format!("text {id}"),
            context: vec![],
            task: TaskKind::Intent,
            gold_label: "fan".into(),
            annotator_ids: vec!["a".into()],
            split,
            source,
            created_at: None,
        };
        let ex = [
            mk("1", ExampleSource::Human, Split::Train),
            mk("2", ExampleSource::Human, Split::Test),
            mk("3", ExampleSource::Curation, Split::Train),
        ];
        let t = PromptTemplate::default_for(TaskKind::Intent).with_examples(&ex, 10);
        assert_eq!(t.few_shot.len(), 1);
        assert!(t.render("x", &[]).contains("Message: text 1\nLabel: fan"));
    }
}
