//! Derives user personas from intent labels and prints the community mix.

use hypermod::domain::TaskKind;
use hypermod::fixtures::fixture_config;
use hypermod::gateway::{BatchOptions, Gateway};
use hypermod::ingest::JsonLines;
use hypermod::persona::{CompositionReport, Persona};
use hypermod::pipeline::Community;

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub fn run() -> hypermod::Result<(CompositionReport, Vec<String>)> {
    let mut community = Community::in_memory(&fixture_config())?;
    community.ingest_reader("sample", std::fs::File::open(SAMPLE)?, &JsonLines)?;
    community.classify(TaskKind::Intent, &Gateway::stub(), &BatchOptions::default())?;
    let page = community.personas(Some(Persona::Crypto), 100, None);
    let crypto = page.profiles.iter().map(|p| p.author_id.clone()).collect();
    Ok((page.report, crypto))
}

fn main() -> hypermod::Result<()> {
    let (r, crypto) = run()?;
    println!("active users        {}", r.active_users);
    println!("crypto enthusiasts  {:>4} ({}%)", r.n_crypto, r.pct_crypto);
    println!("fans                {:>4} ({}%)", r.n_fan, r.pct_fan);
    println!("casual users        {:>4} ({}%)", r.n_casual, r.pct_casual);
    println!("crypto and fan      {:>4}", r.n_crypto_and_fan);
    for (label, share) in &r.message_distribution {
        println!("  {label:<8}{:.1}% of messages", share * 100.0);
    }
    println!("crypto enthusiasts: {}", crypto.join(", "));
    Ok(())
}
