//! Human-in-the-loop moderation: the classifier flags, a moderator decides,
//! and every verdict becomes a curated training example.

use hypermod::domain::{ExampleSource, TaskKind};
use hypermod::fixtures::fixture_config;
use hypermod::gateway::{BatchOptions, Gateway};
use hypermod::ingest::JsonLines;
use hypermod::moderation::{FlagState, Verdict};
use hypermod::pipeline::{Community, ExportFilter, FlagDecision};

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

#[derive(Debug)]
pub struct Review {
    pub raised: usize,
    pub upheld: usize,
    pub overturned: usize,
    pub audited: usize,
    pub curated: usize,
}

pub fn run() -> hypermod::Result<Review> {
    let mut community = Community::in_memory(&fixture_config())?;
    community.ingest_reader("sample", std::fs::File::open(SAMPLE)?, &JsonLines)?;
    community.classify(TaskKind::Moderation, &Gateway::stub(), &BatchOptions::default())?;

    let open = community.flags(Some(FlagState::Pending), 1_000, None).items;
    let (mut upheld, mut overturned) = (0, 0);
    for (i, flag) in open.iter().enumerate() {
        // Pretend the moderator disagrees with every fourth flag.
        let verdict = if i % 4 == 3 { Verdict::Overturned } else { Verdict::Upheld };
        let decision = FlagDecision { verdict, moderator_id: "mod-ana".into(), note: None, label: None };
        community.decide_flag(&flag.flag_id, decision, None)?;
        match verdict {
            Verdict::Upheld => upheld += 1,
            _ => overturned += 1,
        }
    }
    let audited = community.false_negative_audit(5, 42)?.len();
    let filter = ExportFilter { task: TaskKind::Moderation, source: Some(ExampleSource::Curation), from: None, to: None };
    let curated = community.retraining_examples(&filter).len();
    Ok(Review { raised: open.len(), upheld, overturned, audited, curated })
}

fn main() -> hypermod::Result<()> {
    let r = run()?;
    println!("flags raised      {}", r.raised);
    println!("upheld            {}", r.upheld);
    println!("overturned        {}", r.overturned);
    println!("audit sample      {} unflagged messages queued", r.audited);
    println!("curated examples  {}", r.curated);
    Ok(())
}
