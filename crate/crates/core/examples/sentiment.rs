//! Daily sentiment per channel over the sample export.

use hypermod::domain::TaskKind;
use hypermod::fixtures::fixture_config;
use hypermod::gateway::{BatchOptions, Gateway};
use hypermod::ingest::JsonLines;
use hypermod::pipeline::Community;
use hypermod::sentiment::{parse_window, SentimentBucket};

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub fn run() -> hypermod::Result<Vec<SentimentBucket>> {
    let mut community = Community::in_memory(&fixture_config())?;
    community.ingest_reader("sample", std::fs::File::open(SAMPLE)?, &JsonLines)?;
    community.classify(TaskKind::Sentiment, &Gateway::stub(), &BatchOptions::default())?;
    community.sentiment(None, None, None, parse_window("daily")?)
}

fn main() -> hypermod::Result<()> {
    for b in run()? {
        let mean = b.mean_score.map_or("   n/a".to_string(), |m| format!("{m:+.3}"));
        println!(
            "{}  {:<10} +{:<3} ={:<3} -{:<3} {mean}",
            b.window_start.format("%Y-%m-%d"),
            b.channel_id,
            b.n_pos,
            b.n_neu,
            b.n_neg
        );
    }
    Ok(())
}
