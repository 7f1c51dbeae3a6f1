//! Scores contribution labels into per-user ledgers, surfaces reward
//! recommendations and approves one.

use hypermod::contribution::{LeaderboardEntry, RewardState, RewardVerdict};
use hypermod::domain::TaskKind;
use hypermod::fixtures::fixture_config;
use hypermod::gateway::{BatchOptions, Gateway};
use hypermod::ingest::JsonLines;
use hypermod::pipeline::{Community, RewardDecision};

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub struct Outcome {
    pub leaderboard: Vec<LeaderboardEntry>,
    pub pending: usize,
    pub approved: Option<String>,
}

pub fn run() -> hypermod::Result<Outcome> {
    let mut config = fixture_config();
    config.reward_threshold = 5.0;
    let mut community = Community::in_memory(&config)?;
    community.ingest_reader("sample", std::fs::File::open(SAMPLE)?, &JsonLines)?;
    let gateway = Gateway::stub();
    community.classify(TaskKind::Intent, &gateway, &BatchOptions::default())?;
    community.classify(TaskKind::Contribution, &gateway, &BatchOptions::default())?;

    let pending = community.rewards(Some(RewardState::Pending));
    let approved = match pending.first() {
        Some(r) => {
            let decision = RewardDecision { verdict: RewardVerdict::Approved, moderator_id: "mod-ana".into() };
            Some(community.decide_reward(&r.reward_id, decision, None)?.author_id)
        }
        None => None,
    };
    Ok(Outcome { leaderboard: community.leaderboard(5), pending: pending.len(), approved })
}

fn main() -> hypermod::Result<()> {
    let o = run()?;
    for (i, e) in o.leaderboard.iter().enumerate() {
        println!("{}. {:<8} {:>6.2}  {}", i + 1, e.author_id, e.score, e.personas.join("+"));
    }
    println!("{} reward recommendations pending", o.pending);
    if let Some(author) = o.approved {
        println!("approved a reward for {author}");
    }
    Ok(())
}
