//! Loads the bundled sample export into a fresh in-memory community and
//! reports what was kept and what was filtered out.

use hypermod::fixtures::fixture_config;
use hypermod::ingest::{IngestReport, JsonLines};
use hypermod::pipeline::Community;

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub fn run() -> hypermod::Result<IngestReport> {
    let mut community = Community::in_memory(&fixture_config())?;
    let file = std::fs::File::open(SAMPLE)?;
    let (report, errors) = community.ingest_reader("export_small.jsonl", file, &JsonLines)?;
    for e in &errors {
        eprintln!("line {}: {}", e.line_no, e.reason);
    }
    Ok(report)
}

fn main() -> hypermod::Result<()> {
    let r = run()?;
    println!("lines read          {}", r.total_read);
    println!("empty dropped       {}", r.empty_dropped);
    println!("bot lines dropped   {}", r.bot_dropped);
    println!("duplicates dropped  {}", r.duplicates_dropped);
    println!("messages retained   {}", r.retained);
    println!("channels            {}", r.channels);
    println!("active users        {}", r.active_users);
    Ok(())
}
