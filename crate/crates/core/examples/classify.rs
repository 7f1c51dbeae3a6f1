//! Runs one classification batch through the offline rule backend and
//! shows the cache at work on a second pass.

use hypermod::domain::TaskKind;
use hypermod::fixtures::fixture_config;
use hypermod::gateway::{BatchOptions, BatchSummary, Gateway};
use hypermod::ingest::JsonLines;
use hypermod::pipeline::Community;

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub struct Runs {
    pub first: BatchSummary,
    /// The same requests replayed against the gateway; every one is a cache hit.
    pub rerun_cache_hits: u64,
    pub rerun_backend_calls: u64,
}

pub fn run() -> hypermod::Result<Runs> {
    let mut community = Community::in_memory(&fixture_config())?;
    community.ingest_reader("sample", std::fs::File::open(SAMPLE)?, &JsonLines)?;
    let gateway = Gateway::stub();
    let opts = BatchOptions { parallelism: 4, ..BatchOptions::default() };

    let requests = community.pending_requests(TaskKind::Intent, gateway.model_version())?;
    let first = community.classify(TaskKind::Intent, &gateway, &opts)?;
    let again = gateway.run_batch(TaskKind::Intent, &requests, &opts)?;
    Ok(Runs {
        first,
        rerun_cache_hits: again.summary.cache_hits,
        rerun_backend_calls: again.summary.backend_calls,
    })
}

fn main() -> hypermod::Result<()> {
    let runs = run()?;
    let s = &runs.first;
    println!("{} on {} messages with {} ({})", s.run_id, s.message_count, s.backend_id, s.model_version);
    for (label, n) in &s.label_counts {
        println!("  {label:<8}{n}");
    }
    println!("abstained {}  tokens {}  est. cost ${:.4}", s.abstained, s.token_usage, s.estimated_cost);
    println!("rerun: {} cache hits, {} backend calls", runs.rerun_cache_hits, runs.rerun_backend_calls);
    Ok(())
}
