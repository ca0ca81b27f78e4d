//! Word n-gram multisets and the recall-based overlap score used for
//! re-ranking.
//!
//! For each order `n`, with `S` the source n-grams and `Q` a candidate's:
//!
//! ```text
//! R_n   = Σ_{g ∈ S∩Q, cur(g) > 0} min(Q(g), cap(g))  /  Σ_{g ∈ S, cur(g) > 0} cur(g)
//! Score = exp(w · Σ_{active n} ln R_n)
//! ```
//!
//! `cur` is the down-weighted source count and `cap` is the original source
//! count ([`MatchedCountMode::Original`]) or `cur` ([`MatchedCountMode::Current`]).
//! An order is active when its denominator is positive. `w` is
//! `1/|active orders|` or a fixed `1/4` (see [`AverageOver`]). A zero recall at
//! any active order, or no active order at all, gives a score of 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NGram = Vec<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub min_order: usize,
    pub max_order: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            min_order: 1,
            max_order: 4,
        }
    }
}

impl NGramConfig {
    pub fn new(min_order: usize, max_order: usize) -> Result<Self> {
        let config = NGramConfig {
            min_order,
            max_order,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_order < 1 || self.min_order > self.max_order {
            return Err(Error::Config(format!(
                "n-gram orders must satisfy 1 <= min <= max, got {}..={}",
                self.min_order, self.max_order
            )));
        }
        Ok(())
    }

    pub fn orders(&self) -> std::ops::RangeInclusive<usize> {
        self.min_order..=self.max_order
    }
}

/// Which source count caps a matched n-gram in the recall numerator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedCountMode {
    /// Cap by the frozen original count; down-weighted n-grams still count in
    /// full, so scores can exceed 1 (up to `1/λ`).
    #[default]
    Original,
    /// Cap by the down-weighted count; scores stay in `[0, 1]`.
    Current,
}

/// Weight applied to the summed log recalls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageOver {
    /// Always `1/4`, regardless of how many orders are active.
    FixedFour,
    /// `1/k` for `k` active orders: a geometric mean over orders the source
    /// actually has.
    #[default]
    ActiveOrders,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapScoring {
    pub matched_count_mode: MatchedCountMode,
    pub average_over: AverageOver,
}

/// N-gram counts per order. Entries with count 0 are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramMultiset {
    config: NGramConfig,
    orders: Vec<HashMap<NGram, f64>>,
}

impl NGramMultiset {
    pub fn empty(config: NGramConfig) -> Self {
        NGramMultiset {
            config,
            orders: vec![HashMap::new(); config.max_order - config.min_order + 1],
        }
    }

    pub fn extract(tokens: &[String], config: NGramConfig) -> Self {
        let mut multiset = NGramMultiset::empty(config);
        for n in config.orders() {
            let map = &mut multiset.orders[n - config.min_order];
            for window in tokens.windows(n) {
                *map.entry(window.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        multiset
    }

    pub fn config(&self) -> NGramConfig {
        self.config
    }

    /// The map for order `n`, or `None` outside the configured range.
    pub fn order(&self, n: usize) -> Option<&HashMap<NGram, f64>> {
        n.checked_sub(self.config.min_order)
            .and_then(|i| self.orders.get(i))
    }

    pub fn count(&self, gram: &[String]) -> f64 {
        self.order(gram.len())
            .and_then(|m| m.get(gram))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total(&self, n: usize) -> f64 {
        self.order(n).map_or(0.0, |m| m.values().fold(0.0, |a, c| a + c))
    }

    pub fn is_empty(&self) -> bool {
        self.orders.iter().all(|m| m.is_empty())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, f64)> {
        self.orders.iter().flat_map(|m| m.iter().map(|(g, c)| (g, *c)))
    }

    /// Adds `count` to `gram`, ignoring n-grams outside the configured orders.
    pub fn add(&mut self, gram: NGram, count: f64) {
        if let Some(i) = gram.len().checked_sub(self.config.min_order) {
            if let Some(map) = self.orders.get_mut(i) {
                *map.entry(gram).or_insert(0.0) += count;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct SourceEntry {
    order: usize,
    original: f64,
    current: f64,
}

/// A candidate's counts restricted to the source n-grams, keyed by entry index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projection {
    matches: Vec<(usize, f64)>,
}

impl Projection {
    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// The source n-gram counts: a frozen original copy and a down-weighted
/// working copy. `0 <= current <= original` holds for every n-gram.
#[derive(Debug, Clone)]
pub struct SourceCoverageState {
    config: NGramConfig,
    grams: Vec<NGram>,
    entries: Vec<SourceEntry>,
    index: HashMap<NGram, usize>,
}

impl SourceCoverageState {
    pub fn new(source_tokens: &[String], config: NGramConfig) -> Self {
        let mut state = SourceCoverageState {
            config,
            grams: Vec::new(),
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for n in config.orders() {
            for window in source_tokens.windows(n) {
                match state.index.get(window) {
                    Some(&i) => {
                        state.entries[i].original += 1.0;
                        state.entries[i].current += 1.0;
                    }
                    None => {
                        state.index.insert(window.to_vec(), state.entries.len());
                        state.grams.push(window.to_vec());
                        state.entries.push(SourceEntry {
                            order: n,
                            original: 1.0,
                            current: 1.0,
                        });
                    }
                }
            }
        }
        state
    }

    pub fn config(&self) -> NGramConfig {
        self.config
    }

    pub fn original(&self, gram: &[String]) -> f64 {
        self.index.get(gram).map_or(0.0, |&i| self.entries[i].original)
    }

    pub fn current(&self, gram: &[String]) -> f64 {
        self.index.get(gram).map_or(0.0, |&i| self.entries[i].current)
    }

    pub fn original_multiset(&self) -> NGramMultiset {
        self.multiset(|e| e.original)
    }

    pub fn current_multiset(&self) -> NGramMultiset {
        self.multiset(|e| e.current)
    }

    fn multiset(&self, count: impl Fn(&SourceEntry) -> f64) -> NGramMultiset {
        let mut m = NGramMultiset::empty(self.config);
        for (gram, entry) in self.grams.iter().zip(&self.entries) {
            let c = count(entry);
            if c > 0.0 {
                m.add(gram.clone(), c);
            }
        }
        m
    }

    /// Restricts a candidate multiset to the source n-grams.
    pub fn project(&self, candidate: &NGramMultiset) -> Projection {
        let mut matches: Vec<(usize, f64)> = candidate
            .iter()
            .filter(|(_, c)| *c > 0.0)
            .filter_map(|(g, c)| self.index.get(g.as_slice()).map(|&i| (i, c)))
            .collect();
        matches.sort_unstable_by_key(|(i, _)| *i);
        Projection { matches }
    }

    /// Same as `project(&NGramMultiset::extract(tokens, config))` without
    /// materializing the candidate's n-grams.
    pub fn project_tokens(&self, tokens: &[String]) -> Projection {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for n in self.config.orders() {
            for window in tokens.windows(n) {
                if let Some(&i) = self.index.get(window) {
                    *counts.entry(i).or_insert(0.0) += 1.0;
                }
            }
        }
        let mut matches: Vec<(usize, f64)> = counts.into_iter().collect();
        matches.sort_unstable_by_key(|(i, _)| *i);
        Projection { matches }
    }

    pub fn score(&self, candidate: &NGramMultiset, scoring: OverlapScoring) -> f64 {
        self.score_projection(&self.project(candidate), scoring)
    }

    pub fn score_projection(&self, projection: &Projection, scoring: OverlapScoring) -> f64 {
        let orders = self.config.max_order - self.config.min_order + 1;
        let mut numer = vec![0.0; orders];
        let mut denom = vec![0.0; orders];
        for e in &self.entries {
            if e.current > 0.0 {
                denom[e.order - self.config.min_order] += e.current;
            }
        }
        for &(i, count) in &projection.matches {
            let e = &self.entries[i];
            if e.current > 0.0 {
                let cap = match scoring.matched_count_mode {
                    MatchedCountMode::Original => e.original,
                    MatchedCountMode::Current => e.current,
                };
                numer[e.order - self.config.min_order] += count.min(cap);
            }
        }

        let mut active = 0usize;
        let mut log_sum = 0.0;
        for (num, den) in numer.iter().zip(&denom) {
            if *den > 0.0 {
                if *num <= 0.0 {
                    return 0.0;
                }
                active += 1;
                log_sum += (num / den).ln();
            }
        }
        if active == 0 {
            return 0.0;
        }
        let weight = match scoring.average_over {
            AverageOver::FixedFour => 0.25,
            AverageOver::ActiveOrders => 1.0 / active as f64,
        };
        (weight * log_sum).exp()
    }

    /// Source n-grams in the projection whose current count is positive.
    pub fn matched(&self, projection: &Projection) -> Vec<NGram> {
        projection
            .matches
            .iter()
            .filter(|(i, _)| self.entries[*i].current > 0.0)
            .map(|(i, _)| self.grams[*i].clone())
            .collect()
    }

    /// Multiplies the current count of every matched n-gram by `lambda`.
    pub fn downweight<'a, I>(&mut self, matched: I, lambda: f64) -> Result<()>
    where
        I: IntoIterator<Item = &'a NGram>,
    {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut targets = Vec::new();
        for gram in matched {
            match self.index.get(gram.as_slice()) {
                Some(&i) if self.entries[i].current > 0.0 => targets.push(i),
                _ => {
                    return Err(Error::Contract(format!(
                        "n-gram {:?} is not in the source with a positive count",
                        gram.join(" ")
                    )))
                }
            }
        }
        targets.sort_unstable();
        targets.dedup();
        for i in targets {
            self.entries[i].current *= lambda;
        }
        Ok(())
    }

    /// Down-weights every source n-gram a projection matches.
    pub fn downweight_projection(&mut self, projection: &Projection, lambda: f64) -> Result<()> {
        let matched = self.matched(projection);
        self.downweight(&matched, lambda)
    }
}

/// Score of `candidate` against `state`.
pub fn overlap_score(
    state: &SourceCoverageState,
    candidate: &NGramMultiset,
    scoring: OverlapScoring,
) -> f64 {
    state.score(candidate, scoring)
}
