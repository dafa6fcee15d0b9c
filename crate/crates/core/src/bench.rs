//! Trie build time, `allowed_tokens` latency and memory footprint.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::EntityCatalog;
use crate::error::Result;
use crate::pipeline::Kb;
use crate::tokenizer::{TokenId, EOS};
use crate::trie::{ConstraintState, Constraints, TokenTrie, TrieStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
    pub mean_ns: f64,
}

impl LatencySummary {
    pub fn from_samples(mut ns: Vec<u64>) -> Self {
        if ns.is_empty() {
            return LatencySummary { samples: 0, p50_ns: 0, p90_ns: 0, p99_ns: 0, max_ns: 0, mean_ns: 0.0 };
        }
        ns.sort_unstable();
        let q = |f: f64| ns[((ns.len() - 1) as f64 * f).round() as usize];
        LatencySummary {
            samples: ns.len(),
            p50_ns: q(0.5),
            p90_ns: q(0.9),
            p99_ns: q(0.99),
            max_ns: *ns.last().expect("non-empty"),
            mean_ns: ns.iter().sum::<u64>() as f64 / ns.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub entities: usize,
    pub build_secs: f64,
    pub trie: TrieStats,
    pub allowed_tokens: LatencySummary,
    /// Peak resident set size of this process, when the platform reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// Time `allowed_tokens` at `samples` cursors visited by random constrained
/// walks from the root. Walks restart after EOS or `max_len` tokens.
pub fn allowed_tokens_latency(trie: &TokenTrie, cfg: &Constraints, samples: usize, max_len: usize, seed: u64) -> LatencySummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ns = Vec::with_capacity(samples);
    let mut buf: Vec<TokenId> = Vec::new();
    let mut state = ConstraintState::default();
    let mut len = 0usize;
    while ns.len() < samples {
        let t0 = Instant::now();
        trie.allowed_tokens_into(state.cursor, &state.emitted, cfg, &mut buf);
        ns.push(t0.elapsed().as_nanos() as u64);
        let tok = buf[rng.random_range(0..buf.len())];
        len += 1;
        if tok == EOS || len >= max_len {
            state = ConstraintState::default();
            len = 0;
        } else {
            state.push_unchecked(trie, tok);
        }
    }
    LatencySummary::from_samples(ns)
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Build the KB for `catalog` and measure it.
pub fn run(catalog: EntityCatalog, samples: usize, seed: u64) -> Result<(Kb, BenchReport)> {
    let entities = catalog.len();
    let t0 = Instant::now();
    let kb = Kb::build(catalog)?;
    let build_secs = t0.elapsed().as_secs_f64();
    let allowed_tokens = allowed_tokens_latency(&kb.trie, &Constraints::default(), samples, 32, seed);
    let report = BenchReport { entities, build_secs, trie: kb.trie.stats(), allowed_tokens, peak_rss_bytes: peak_rss_bytes() };
    Ok((kb, report))
}
