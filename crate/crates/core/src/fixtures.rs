//! Deterministic synthetic data: labeled test sets whose stub predictions
//! realise a given confusion matrix, and chat exports with engineered
//! per-user intent counts.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{AnnotatedExample, ChatMessage, CommunityConfig, ExampleSource, Split, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{published, ConfusionMatrix};

pub const FIXTURE_ANNOTATOR: &str = "fixture";

/// Author ids of the bot accounts that appear in generated exports.
pub const BOT_IDS: [&str; 2] = ["bot-carl", "bot-mee6"];

/// Default community settings with the generated exports' bots registered.
pub fn fixture_config() -> CommunityConfig {
    CommunityConfig {
        community_id: "fixture".to_string(),
        bot_author_ids: BOT_IDS.iter().map(|b| b.to_string()).collect(),
        ..CommunityConfig::default()
    }
}

/// Texts the bundled stub rules put in `label` for `task`.
pub fn texts_for(task: TaskKind, label: &str) -> &'static [&'static str] {
    match (task, label) {
        (TaskKind::Intent, "crypto") => &[
            "when is the next airdrop dropping?",
            "floor price is pumping today, love it",
            "gas fees are brutal right now",
            "free nft giveaway, click here",
            "connect your wallet with metamask before the bridge opens",
            "anyone selling their nft before the mint?",
            "that token launch was a scam, so disappointed",
            "is staking live yet?",
        ],
        (TaskKind::Intent, "fan") => &[
            "the tardis scene in the last episode was brilliant",
            "building a cyberman deck for the next tournament",
            "which doctor had the best regeneration?",
            "in the episode the doctor explains the paradox",
            "the card draw combo wins most matches",
            "i made some fan art of the daleks",
            "this season was the worst, so sad",
            "favourite companion so far?",
        ],
        (TaskKind::Intent, "casual") => &[
            "gm everyone",
            "lol that's hilarious",
            "hey how's everyone doing",
            "welcome to the server! check out the faq to get started",
            "shut up you idiot lol",
            "it would be nice to have a trading channel, thanks",
            "please keep it civil, thanks",
            "man that sucked lol",
            "coffee first, then the weekend",
            "haha gg, that was fun",
            "gn all, the podcast stream starts tomorrow",
        ],
        (TaskKind::Moderation, "toxic") => &[
            "shut up you idiot",
            "you are such a loser",
            "this take is trash and so are you",
            "what a moron",
        ],
        (TaskKind::Moderation, "spam") => &[
            "free nft giveaway, click here",
            "dm me for a promo code",
            "guaranteed profits, join now at bit.ly/x",
        ],
        (TaskKind::Moderation, "not_toxic_not_spam") => &[
            "gm everyone",
            "thanks for the help",
            "good game last night",
            "the new set releases on friday",
        ],
        (TaskKind::Contribution, "na") => &["gm", "lol nice", "see you all tomorrow", "same here"],
        (TaskKind::Contribution, "onboarding") => &[
            "welcome to the server! check out the faq to get started",
            "new here? getting started is easy, read the pinned post",
        ],
        (TaskKind::Contribution, "knowledge_tcg") => &[
            "the card draw combo wins most matches",
            "tcg tip: combos beat raw power",
        ],
        (TaskKind::Contribution, "knowledge_fan") => &[
            "in the episode the doctor explains the paradox",
            "companions always return in the finale",
        ],
        (TaskKind::Contribution, "knowledge_crypto") => &[
            "connect your wallet with metamask before the bridge opens",
        ],
        (TaskKind::Contribution, "content") => &[
            "i made some fan art of the daleks",
            "the podcast stream starts at 8",
        ],
        (TaskKind::Contribution, "moderation") => &[
            "please keep it civil, thanks",
            "that is against the rules, reported",
        ],
        (TaskKind::Contribution, "suggestion") => &[
            "it would be nice to have a trading channel, thanks",
            "could we add a voice channel for matches?",
        ],
        (TaskKind::Sentiment, "positive") => &[
            "Hey that was a great game!",
            "love the new cards, awesome update",
            "so excited for the tournament",
        ],
        (TaskKind::Sentiment, "neutral") => &[
            "Yeah that's just the way it is.",
            "noted, okay",
            "the event starts at 8",
        ],
        (TaskKind::Sentiment, "negative") => &[
            "Man that sucked",
            "terrible patch, so disappointed",
            "the servers are broken again",
        ],
        _ => &[],
    }
}

/// Texts no intent rule matches; the stub labels them casual by default.
pub const AMBIGUOUS_TEXTS: &[&str] = &[
    "ok",
    "brb",
    "anyone around?",
    "that's wild",
    "same here",
    "for real though",
    "Yeah that's just the way it is.",
];

/// Misclassification texts for specific (gold, predicted) cells, chosen to
/// look like what a real model would get wrong.
fn edge_texts(task: TaskKind, gold: &str, predicted: &str) -> &'static [&'static str] {
    match (task, gold, predicted) {
        (TaskKind::Moderation, "toxic", "not_toxic_not_spam") => &["nobody wants you here, go away"],
        (TaskKind::Moderation, "spam", "not_toxic_not_spam") => &["check my profile for something special"],
        (TaskKind::Moderation, "not_toxic_not_spam", "toxic") => {
            &["this boss fight is killing me, so stupid hard lol"]
        }
        _ => &[],
    }
}

const CONTEXT_LINES: &[&str] = &[
    "what deck should i build first?",
    "how do i join the tournament?",
    "anyone know when the next drop is?",
    "just joined, hi all",
];

/// Labeled examples whose stub predictions form exactly `matrix`: for each
/// cell (gold i, predicted j) it emits `counts[i][j]` examples with gold
/// label i and a text the stub labels j.
pub fn labeled_fixture(task: TaskKind, matrix: &ConfusionMatrix) -> Result<Vec<AnnotatedExample>> {
    if matrix.labels.iter().map(String::as_str).ne(task.labels().iter().copied()) {
        return Err(Error::validation(format!("matrix labels do not match the {task} label set")));
    }
    let mut out = Vec::with_capacity(matrix.n() as usize);
    for (i, gold) in matrix.labels.iter().enumerate() {
        for (j, predicted) in matrix.labels.iter().enumerate() {
            let edge = edge_texts(task, gold, predicted);
            let pool = if edge.is_empty() { texts_for(task, predicted) } else { edge };
            for k in 0..matrix.counts[i][j] as usize {
                let n = out.len();
                let context = if task == TaskKind::Contribution {
                    vec![
                        CONTEXT_LINES[n % CONTEXT_LINES.len()].to_string(),
                        CONTEXT_LINES[(n + 1) % CONTEXT_LINES.len()].to_string(),
                    ]
                } else {
                    Vec::new()
                };
                out.push(AnnotatedExample {
                    example_id: format!("{task}-test-{:04}", n + 1),
                    text: pool[k % pool.len()].to_string(),
                    context,
                    task,
                    gold_label: gold.clone(),
                    annotator_ids: vec![FIXTURE_ANNOTATOR.to_string()],
                    split: Split::Test,
                    source: ExampleSource::Human,
                    created_at: None,
                });
            }
        }
    }
    Ok(out)
}

/// Test set realising the matrix reconstructed from the task's published table.
pub fn published_fixture(task: TaskKind) -> Vec<AnnotatedExample> {
    labeled_fixture(task, &published::matrix(task)).expect("published matrices use the task labels")
}

/// Resolves the built-in fixture names accepted on the command line.
pub fn named_fixture(name: &str) -> Option<(TaskKind, Vec<AnnotatedExample>)> {
    let task = match name {
        "table1_fixture" | "intent_test" => TaskKind::Intent,
        "table2_fixture" | "moderation_test" => TaskKind::Moderation,
        "table3_fixture" | "contribution_test" => TaskKind::Contribution,
        "table4_fixture" | "sentiment_test" => TaskKind::Sentiment,
        _ => return None,
    };
    Some((task, published_fixture(task)))
}

/// Shape of a synthetic export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSpec {
    pub seed: u64,
    /// Users with at least `threshold` crypto and fan messages.
    pub users_both: usize,
    pub users_crypto_only: usize,
    pub users_fan_only: usize,
    pub users_casual: usize,
    pub threshold: u32,
    pub crypto_messages: usize,
    pub fan_messages: usize,
    pub casual_messages: usize,
    /// Messages matching no intent rule.
    pub ambiguous_messages: usize,
    pub empty_lines: usize,
    pub bot_lines: usize,
    pub duplicate_lines: usize,
    pub channels: usize,
    pub start: DateTime<Utc>,
    pub days: i64,
}

const CHANNELS: [&str; 10] = [
    "general",
    "crypto-talk",
    "fan-zone",
    "tcg-decks",
    "marketplace",
    "lore",
    "off-topic",
    "welcome",
    "suggestions",
    "support",
];

impl ExportSpec {
    /// Sixty-five thousand lines: 59,910 retained messages by 1,121 users in
    /// ten channels, labelled roughly 18% crypto, 25% fan, 52% casual with
    /// the remaining 5% matching no rule.
    pub fn paper() -> Self {
        ExportSpec {
            seed: 2023,
            users_both: 181,
            users_crypto_only: 162,
            users_fan_only: 62,
            users_casual: 716,
            threshold: 3,
            crypto_messages: 10_784,
            fan_messages: 14_978,
            casual_messages: 31_153,
            ambiguous_messages: 2_995,
            empty_lines: 2_400,
            bot_lines: 2_290,
            duplicate_lines: 400,
            channels: 10,
            start: Utc.with_ymd_and_hms(2023, 3, 1, 0, 0, 0).unwrap(),
            days: 30,
        }
    }

    /// A thousand-message export small enough to ship and read.
    pub fn small() -> Self {
        ExportSpec {
            seed: 7,
            users_both: 6,
            users_crypto_only: 5,
            users_fan_only: 3,
            users_casual: 26,
            threshold: 3,
            crypto_messages: 180,
            fan_messages: 250,
            casual_messages: 520,
            ambiguous_messages: 50,
            empty_lines: 20,
            bot_lines: 20,
            duplicate_lines: 10,
            channels: 3,
            start: Utc.with_ymd_and_hms(2023, 3, 1, 0, 0, 0).unwrap(),
            days: 7,
        }
    }

    pub fn users(&self) -> usize {
        self.users_both + self.users_crypto_only + self.users_fan_only + self.users_casual
    }

    pub fn retained(&self) -> usize {
        self.crypto_messages + self.fan_messages + self.casual_messages + self.ambiguous_messages
    }

    pub fn total_lines(&self) -> usize {
        self.retained() + self.empty_lines + self.bot_lines + self.duplicate_lines
    }

    pub fn n_crypto(&self) -> usize {
        self.users_both + self.users_crypto_only
    }

    pub fn n_fan(&self) -> usize {
        self.users_both + self.users_fan_only
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Crypto,
    Fan,
    Casual,
    Ambiguous,
}

/// One generated export line.
#[derive(Debug, Clone, PartialEq)]
pub enum ExportLine {
    Message(ChatMessage),
    Empty(ChatMessage),
    Bot(ChatMessage),
    Duplicate(ChatMessage),
}

impl ExportLine {
    pub fn message(&self) -> &ChatMessage {
        match self {
            ExportLine::Message(m) | ExportLine::Empty(m) | ExportLine::Bot(m) | ExportLine::Duplicate(m) => m,
        }
    }
}

/// Spreads `total` messages over users: those in `members` get at least
/// `min`, the others at most `min - 1`.
fn allocate(rng: &mut ChaCha8Rng, counts: &mut [usize], members: &BTreeSet<usize>, total: usize, min: usize) -> Result<()> {
    let n = counts.len();
    let mut remaining = total
        .checked_sub(members.len() * min)
        .ok_or_else(|| Error::validation("too few messages for the requested personas"))?;
    for &u in members {
        counts[u] += min;
    }
    // Sprinkle sub-threshold counts over non-members.
    for u in (0..n).filter(|u| !members.contains(u)) {
        if remaining == 0 {
            break;
        }
        let k = rng.gen_range(0..min).min(remaining);
        counts[u] += k;
        remaining -= k;
    }
    if remaining > 0 {
        let ids: Vec<usize> = members.iter().copied().collect();
        if ids.is_empty() {
            return Err(Error::validation("messages left over with no persona members to carry them"));
        }
        // Heavy-tailed activity: a few prolific members, many quiet ones.
        let weights: Vec<f64> = ids.iter().map(|_| 1.0 / rng.gen_range(0.02f64..1.0)).collect();
        let dist = WeightedIndex::new(&weights).expect("positive weights");
        for _ in 0..remaining {
            counts[ids[dist.sample(rng)]] += 1;
        }
    }
    Ok(())
}

/// Generates the lines of a synthetic export in file order.
pub fn generate_export(spec: &ExportSpec) -> Result<Vec<ExportLine>> {
    if spec.channels == 0 || spec.channels > CHANNELS.len() {
        return Err(Error::validation(format!("channels must be between 1 and {}", CHANNELS.len())));
    }
    if spec.threshold == 0 {
        return Err(Error::validation("threshold must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_users = spec.users();
    let k = spec.threshold as usize;
    let crypto_members: BTreeSet<usize> = (0..spec.n_crypto()).collect();
    let fan_members: BTreeSet<usize> = (0..spec.users_both)
        .chain(spec.n_crypto()..spec.n_crypto() + spec.users_fan_only)
        .collect();

    let mut crypto = vec![0usize; n_users];
    let mut fan = vec![0usize; n_users];
    allocate(&mut rng, &mut crypto, &crypto_members, spec.crypto_messages, k)?;
    allocate(&mut rng, &mut fan, &fan_members, spec.fan_messages, k)?;

    // Every user needs at least one message.
    let mut casual = vec![0usize; n_users];
    let mut ambiguous = vec![0usize; n_users];
    let silent: Vec<usize> = (0..n_users).filter(|&u| crypto[u] + fan[u] == 0).collect();
    if silent.len() > spec.casual_messages {
        return Err(Error::validation("too few casual messages to give every user one"));
    }
    for &u in &silent {
        casual[u] += 1;
    }
    let activity: Vec<f64> = (0..n_users).map(|_| 1.0 / rng.gen_range(0.02f64..1.0)).collect();
    let dist = WeightedIndex::new(&activity).expect("positive weights");
    for _ in silent.len()..spec.casual_messages {
        casual[dist.sample(&mut rng)] += 1;
    }
    for _ in 0..spec.ambiguous_messages {
        ambiguous[dist.sample(&mut rng)] += 1;
    }

    let mut pending: Vec<(usize, Kind)> = Vec::with_capacity(spec.retained());
    for u in 0..n_users {
        for (count, kind) in [(crypto[u], Kind::Crypto), (fan[u], Kind::Fan), (casual[u], Kind::Casual), (ambiguous[u], Kind::Ambiguous)] {
            pending.extend(std::iter::repeat((u, kind)).take(count));
        }
    }
    pending.shuffle(&mut rng);

    let span_secs = spec.days * 86_400;
    let mut stamps: Vec<i64> = (0..pending.len() + spec.empty_lines + spec.bot_lines)
        .map(|_| rng.gen_range(0..span_secs))
        .collect();
    stamps.sort_unstable();

    // Interleave retained, empty and bot lines, then order by time.
    let mut slots: Vec<u8> = std::iter::repeat(0u8)
        .take(pending.len())
        .chain(std::iter::repeat(1).take(spec.empty_lines))
        .chain(std::iter::repeat(2).take(spec.bot_lines))
        .collect();
    slots.shuffle(&mut rng);

    let channels = &CHANNELS[..spec.channels];
    let mut lines = Vec::with_capacity(spec.total_lines());
    let mut next_message = pending.into_iter();
    for (i, slot) in slots.into_iter().enumerate() {
        let channel = channels[rng.gen_range(0..channels.len())];
        let at = spec.start + Duration::seconds(stamps[i]);
        let id = format!("m{:06}", i + 1);
        let line = match slot {
            0 => {
                let (u, kind) = next_message.next().expect("one retained message per slot");
                let pool = match kind {
                    Kind::Crypto => texts_for(TaskKind::Intent, "crypto"),
                    Kind::Fan => texts_for(TaskKind::Intent, "fan"),
                    Kind::Casual => texts_for(TaskKind::Intent, "casual"),
                    Kind::Ambiguous => AMBIGUOUS_TEXTS,
                };
                ExportLine::Message(chat(&id, channel, &format!("u{:04}", u + 1), at, pool.choose(&mut rng).unwrap()))
            }
            1 => ExportLine::Empty(chat(&id, channel, &format!("u{:04}", rng.gen_range(0..n_users) + 1), at, [" ", "", "\t", "  \n "][rng.gen_range(0..4)])),
            _ => {
                let bot = BOT_IDS[rng.gen_range(0..BOT_IDS.len())];
                ExportLine::Bot(chat(&id, channel, bot, at, "level up! you reached level 5"))
            }
        };
        lines.push(line);
    }

    // Re-deliveries of already seen messages, each after its original.
    for _ in 0..spec.duplicate_lines {
        let src = loop {
            let s = rng.gen_range(0..lines.len());
            if matches!(lines[s], ExportLine::Message(_)) {
                break s;
            }
        };
        let at = rng.gen_range(src + 1..=lines.len());
        let copy = ExportLine::Duplicate(lines[src].message().clone());
        lines.insert(at, copy);
    }
    Ok(lines)
}

fn chat(id: &str, channel: &str, author: &str, at: DateTime<Utc>, content: &str) -> ChatMessage {
    ChatMessage {
        message_id: id.to_string(),
        channel_id: channel.to_string(),
        channel_name: channel.to_string(),
        author_id: author.to_string(),
        author_name: author.replace('u', "user"),
        timestamp: at,
        content: content.to_string(),
        reply_to: None,
    }
}

pub fn write_export(lines: &[ExportLine], out: &mut impl Write) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut *out, line.message())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_examples(examples: &[AnnotatedExample], out: &mut impl Write) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The 4-unit, 2-annotator grid with alpha = 8/15.
pub fn worked_agreement_grid() -> Vec<Vec<Option<String>>> {
    [["a", "a"], ["a", "b"], ["b", "b"], ["b", "b"]]
        .iter()
        .map(|u| u.iter().map(|v| Some(v.to_string())).collect())
        .collect()
}

/// Every data file shipped under `data/fixtures`, as `(file name, bytes)`.
pub fn shipped_fixtures() -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    let mut export = Vec::new();
    write_export(&generate_export(&ExportSpec::small())?, &mut export)?;
    files.push(("export_small.jsonl".to_string(), export));
    for task in TaskKind::ALL {
        let mut buf = Vec::new();
        write_examples(&published_fixture(task), &mut buf)?;
        files.push((format!("{task}_test.jsonl"), buf));
    }
    let mut grid = serde_json::to_vec_pretty(&serde_json::json!({ "grid": worked_agreement_grid() }))?;
    grid.push(b'\n');
    files.push(("agreement_worked.json".to_string(), grid));
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::RuleTable;
    use std::collections::BTreeMap;

    #[test]
    fn every_template_gets_its_label_from_the_stub() {
        for task in TaskKind::ALL {
            let table = RuleTable::builtin(task);
            for label in task.labels() {
                let pool = texts_for(task, label);
                assert!(!pool.is_empty(), "{task}/{label} has no texts");
                for text in pool {
                    assert_eq!(table.classify(text), *label, "{task}: {text:?}");
                }
            }
        }
        let intent = RuleTable::builtin(TaskKind::Intent);
        for text in AMBIGUOUS_TEXTS {
            assert_eq!(intent.scores(text)["casual"], 1.0, "{text:?} matched an intent rule");
        }
    }

    #[test]
    fn edge_texts_land_in_their_cells() {
        let table = RuleTable::builtin(TaskKind::Moderation);
        for (gold, pred) in [("toxic", "not_toxic_not_spam"), ("spam", "not_toxic_not_spam"), ("not_toxic_not_spam", "toxic")] {
            for text in edge_texts(TaskKind::Moderation, gold, pred) {
                assert_eq!(table.classify(text), pred);
            }
        }
    }

    #[test]
    fn fixture_sizes() {
        let sizes: Vec<usize> = TaskKind::ALL.iter().map(|t| published_fixture(*t).len()).collect();
        assert_eq!(sizes, [116, 383, 211, 75]);
    }

    #[test]
    fn small_export_counts() {
        let spec = ExportSpec::small();
        let lines = generate_export(&spec).unwrap();
        assert_eq!(lines.len(), spec.total_lines());
        let msgs: Vec<&ChatMessage> = lines
            .iter()
            .filter_map(|l| match l {
                ExportLine::Message(m) => Some(m),
                _ => None,
            })
            .collect();
        assert_eq!(msgs.len(), spec.retained());
        let table = RuleTable::builtin(TaskKind::Intent);
        let mut per_user: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
        for m in &msgs {
            let e = per_user.entry(&m.author_id).or_default();
            match table.classify(&m.content) {
                "crypto" => e[0] += 1,
                "fan" => e[1] += 1,
                _ => {}
            }
        }
        assert_eq!(per_user.len(), spec.users());
        assert_eq!(per_user.values().filter(|c| c[0] >= 3).count(), spec.n_crypto());
        assert_eq!(per_user.values().filter(|c| c[1] >= 3).count(), spec.n_fan());
        assert_eq!(generate_export(&spec).unwrap(), lines);
    }
}
