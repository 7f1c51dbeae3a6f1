//! Community pulse: sentiment counts per tumbling UTC window.

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALL_CHANNELS: &str = "ALL";
pub const DAILY: Duration = Duration::from_secs(86_400);

/// A sentiment label located in time and channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentObservation {
    pub channel_id: String,
    pub at: DateTime<Utc>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentBucket {
    pub channel_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub n_pos: u64,
    pub n_neu: u64,
    pub n_neg: u64,
    /// `(n_pos - n_neg) / total`; `None` for an empty window.
    pub mean_score: Option<f64>,
}

impl SentimentBucket {
    pub fn total(&self) -> u64 {
        self.n_pos + self.n_neu + self.n_neg
    }
}

pub fn mean_score(n_pos: u64, n_neu: u64, n_neg: u64) -> Option<f64> {
    let total = n_pos + n_neu + n_neg;
    (total > 0).then(|| (n_pos as f64 - n_neg as f64) / total as f64)
}

pub fn parse_window(s: &str) -> Result<Duration> {
    match s {
        "daily" | "1d" => Ok(DAILY),
        "hourly" | "1h" => Ok(Duration::from_secs(3_600)),
        "weekly" | "7d" => Ok(DAILY * 7),
        other => other
            .strip_suffix('s')
            .and_then(|n| n.parse::<u64>().ok())
            .filter(|n| *n > 0)
            .map(Duration::from_secs)
            .ok_or_else(|| Error::validation(format!("unknown window {other:?}"))),
    }
}

/// Partitions observations into tumbling windows aligned to the Unix epoch
/// (and so to UTC midnight for day-sized windows).
///
/// With a channel filter only that channel is counted; otherwise all
/// channels are pooled under [`ALL_CHANNELS`]. Windows between the first and
/// last occupied one (widened by `from`/`to`) are reported even when empty.
pub fn bucketize(
    observations: &[SentimentObservation],
    window: Duration,
    channel: Option<&str>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
) -> Result<Vec<SentimentBucket>> {
    let width = window.as_secs() as i64;
    if width <= 0 {
        return Err(Error::validation("window size must be at least one second"));
    }
    let start_of = |t: DateTime<Utc>| t.timestamp().div_euclid(width) * width;

    let mut counts: BTreeMap<i64, [u64; 3]> = BTreeMap::new();
    for obs in observations {
        if channel.is_some_and(|c| c != obs.channel_id) {
            continue;
        }
        if from.is_some_and(|f| obs.at < f) || to.is_some_and(|t| obs.at >= t) {
            continue;
        }
        let slot = match obs.label.as_str() {
            "positive" => 0,
            "neutral" => 1,
            "negative" => 2,
            other => {
                return Err(Error::validation(format!(
                    "{other:?} is not a sentiment label"
                )))
            }
        };
        counts.entry(start_of(obs.at)).or_insert([0; 3])[slot] += 1;
    }
    if counts.is_empty() {
        return Ok(Vec::new());
    }

    let mut first = *counts.keys().next().expect("non-empty");
    let mut last = *counts.keys().next_back().expect("non-empty");
    if let Some(f) = from {
        first = first.min(start_of(f));
    }
    if let Some(t) = to {
        // `to` is exclusive
        last = last.max(start_of(t - chrono::Duration::seconds(1)));
    }
    let label = channel.unwrap_or(ALL_CHANNELS).to_string();
    let mut out = Vec::with_capacity(((last - first) / width + 1) as usize);
    let mut start = first;
    while start <= last {
        let [p, n, g] = counts.get(&start).copied().unwrap_or([0; 3]);
        out.push(SentimentBucket {
            channel_id: label.clone(),
            window_start: Utc.timestamp_opt(start, 0).unwrap(),
            window_end: Utc.timestamp_opt(start + width, 0).unwrap(),
            n_pos: p,
            n_neu: n,
            n_neg: g,
            mean_score: mean_score(p, n, g),
        });
        start += width;
    }
    Ok(out)
}
