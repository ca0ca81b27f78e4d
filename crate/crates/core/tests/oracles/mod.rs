//! Brute-force reference implementations used as test oracles.
//!
//! These are written straight from the scoring formulas with plain maps and
//! full rescans, sharing no code with the library beyond its public types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use icmt_core::{AverageOver, MatchedCountMode};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Exhaustive Okapi BM25: every document is scored against every distinct
/// query term. Returns `(doc index, score)` for positive scores, best first,
/// ties by index.
pub fn bm25_exhaustive(docs: &[Vec<String>], query: &[String], k1: f64, b: f64, k: usize) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut score = 0.0;
            for term in &terms {
                let tf = doc.iter().filter(|t| t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avg));
            }
            (i, score)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, f64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *m.entry(tokens[i..i + n].to_vec()).or_insert(0.0) += 1.0;
        }
    }
    m
}

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub lambda: f64,
    pub threshold: f64,
    pub q_max: usize,
    pub min_order: usize,
    pub max_order: usize,
    pub mode: MatchedCountMode,
    pub average: AverageOver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    /// (candidate index, score)
    pub picks: Vec<(usize, f64)>,
    pub stop: &'static str,
}

/// Greedy recall-coverage selection, rescoring every remaining candidate from
/// scratch at each step. Candidates are given in BM25 rank order.
pub fn rerank_exhaustive(source: &[String], pool: &[Vec<String>], cfg: OracleConfig) -> OracleSelection {
    let orders: Vec<usize> = (cfg.min_order..=cfg.max_order).collect();
    let original: BTreeMap<usize, HashMap<Vec<String>, f64>> =
        orders.iter().map(|&n| (n, ngram_counts(source, n))).collect();
    let mut current = original.clone();
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut picks = Vec::new();

    let score = |cand: &[String], current: &BTreeMap<usize, HashMap<Vec<String>, f64>>| -> f64 {
        let mut logs = Vec::new();
        for &n in &orders {
            let cur = &current[&n];
            let denom: f64 = cur.values().filter(|c| **c > 0.0).sum();
            if denom <= 0.0 {
                continue;
            }
            let q = ngram_counts(cand, n);
            let numer: f64 = cur
                .iter()
                .filter(|(_, c)| **c > 0.0)
                .map(|(g, c)| {
                    let cap = match cfg.mode {
                        MatchedCountMode::Original => original[&n][g],
                        MatchedCountMode::Current => *c,
                    };
                    q.get(g).copied().unwrap_or(0.0).min(cap)
                })
                .sum();
            if numer == 0.0 {
                return 0.0;
            }
            logs.push((numer / denom).ln());
        }
        if logs.is_empty() {
            return 0.0;
        }
        let w = match cfg.average {
            AverageOver::FixedFour => 0.25,
            AverageOver::ActiveOrders => 1.0 / logs.len() as f64,
        };
        (w * logs.iter().sum::<f64>()).exp()
    };

    let stop = loop {
        if picks.len() == cfg.q_max {
            break "q_max";
        }
        if remaining.is_empty() {
            break if pool.is_empty() { "threshold" } else { "pool_exhausted" };
        }
        let scores: Vec<(usize, f64)> = remaining.iter().map(|&i| (i, score(&pool[i], &current))).collect();
        let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.threshold {
            break "threshold";
        }
        // Lowest index (best BM25 rank) among the near-maximal scores.
        let &(winner, s) = scores.iter().find(|(_, s)| *s >= best - 1e-9).unwrap();
        picks.push((winner, s));
        remaining.retain(|&i| i != winner);
        for &n in &orders {
            let q = ngram_counts(&pool[winner], n);
            for (g, c) in current.get_mut(&n).unwrap().iter_mut() {
                if *c > 0.0 && q.contains_key(g) {
                    *c *= cfg.lambda;
                }
            }
        }
    };
    OracleSelection { picks, stop }
}

/// Unsmoothed corpus BLEU straight from the definition, on whitespace tokens.
pub fn bleu_exhaustive(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut matches = [0.0; 4];
    let mut totals = [0.0; 4];
    let (mut h_len, mut r_len) = (0.0, 0.0);
    for (h, r) in hyps.iter().zip(refs) {
        h_len += h.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0.0));
                totals[n - 1] += c;
            }
        }
    }
    if h_len == 0.0 || matches.contains(&0.0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|i| (matches[i] / totals[i]).ln()).sum::<f64>() / 4.0;
    let bp = if h_len < r_len { (1.0 - r_len / h_len).exp() } else { 1.0 };
    100.0 * bp * log_p.exp()
}

/// Frozen BLEU cases: (hypothesis, reference, corpus BLEU, sentence BLEU).
pub const BLEU_PAIRS: &[(&str, &str, f64, f64)] = &[
    ("a b c d", "a b c d e", 77.880078307140, 77.880078307140),
    ("the cat sat on the mat", "the cat sat on the mat", 100.0, 100.0),
    ("x y z", "a b c", 0.0, 0.0),
    ("the the the the the the the", "the cat is on the mat", 0.0, 19.205612637499),
    ("the cat sat on the mat today", "the cat sat on the mat", 80.910671157022, 80.910671157022),
    ("the quick brown fox jumps", "the quick brown dog jumps over", 0.0, 37.592003642100),
    ("a a a a b", "a a b a a", 0.0, 53.728496591177),
    (
        "Welche Risiken sind mit Sebivo verbunden ?",
        "Welche Risiken sind mit Poulvac FluFend H5N3 RG verbunden ?",
        31.850355294023,
        31.850355294023,
    ),
];

pub const BLEU_CORPORA: &[(&[(&str, &str)], f64)] = &[
    (&[("a b c d e f", "a b c d e g"), ("x y z w v", "x y z w u")], 72.265688114561),
    (&[("the cat", "the cat sat"), ("on the mat there", "on the mat there was")], 71.653131057379),
];
