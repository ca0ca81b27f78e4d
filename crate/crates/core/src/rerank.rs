//! Greedy re-ranking of retrieved candidates by n-gram recall coverage.
//!
//! Each iteration scores every remaining candidate against the source
//! coverage state, appends the best one (ties go to the better BM25 rank),
//! and multiplies the counts of the source n-grams it matched by `lambda`.
//! Selection stops when the best score falls below `threshold`, when `q_max`
//! examples are selected, or when every candidate has been taken.

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Index, RetrievalCandidate};
use crate::corpus::{ExampleId, ExampleLookup};
use crate::error::{Error, Result};
use crate::ngram::{
    AverageOver, MatchedCountMode, NGramConfig, NGramMultiset, OverlapScoring, SourceCoverageState,
};

/// Scores within this distance of the maximum count as tied.
pub const SCORE_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub lambda: f64,
    pub threshold: f64,
    pub q_max: usize,
    pub ngram: NGramConfig,
    pub matched_count_mode: MatchedCountMode,
    pub average_over: AverageOver,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            lambda: 0.1,
            threshold: 1.0,
            q_max: 16,
            ngram: NGramConfig::default(),
            matched_count_mode: MatchedCountMode::Original,
            average_over: AverageOver::ActiveOrders,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        self.ngram.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.q_max < 1 {
            return Err(Error::Config("q_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn scoring(&self) -> OverlapScoring {
        OverlapScoring {
            matched_count_mode: self.matched_count_mode,
            average_over: self.average_over,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    QMax,
    PoolExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedExample {
    pub id: ExampleId,
    pub score: f64,
    /// 1-based selection step.
    pub iteration: usize,
    pub bm25_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedSelection {
    pub selected: Vec<SelectedExample>,
    pub stopped_by: StopReason,
}

impl RerankedSelection {
    pub fn ids(&self) -> Vec<ExampleId> {
        self.selected.iter().map(|s| s.id).collect()
    }
}

/// A retrieved example with access to its source tokens.
#[derive(Debug, Clone, Copy)]
pub struct PoolCandidate<'a> {
    pub id: ExampleId,
    pub rank: usize,
    pub source_tokens: &'a [String],
}

pub fn rerank(
    source_tokens: &[String],
    candidates: &[PoolCandidate<'_>],
    config: &RerankConfig,
) -> Result<RerankedSelection> {
    config.validate()?;
    let scoring = config.scoring();
    let mut state = SourceCoverageState::new(source_tokens, config.ngram);
    let projections: Vec<_> = candidates
        .iter()
        .map(|c| state.project_tokens(c.source_tokens))
        .collect();
    let mut available = vec![true; candidates.len()];
    let mut selected = Vec::new();

    let stopped_by = loop {
        if selected.len() >= config.q_max {
            break StopReason::QMax;
        }
        if !available.iter().any(|&a| a) {
            break if candidates.is_empty() {
                StopReason::Threshold
            } else {
                StopReason::PoolExhausted
            };
        }

        let scores: Vec<Option<f64>> = projections
            .iter()
            .zip(&available)
            .map(|(p, &a)| a.then(|| state.score_projection(p, scoring)))
            .collect();
        let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        if best < config.threshold {
            break StopReason::Threshold;
        }
        let winner = scores
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.filter(|s| *s >= best - SCORE_TIE_EPSILON).map(|_| i))
            .min_by_key(|&i| (candidates[i].rank, i))
            .expect("at least one candidate reaches the maximum");

        available[winner] = false;
        selected.push(SelectedExample {
            id: candidates[winner].id,
            score: scores[winner].unwrap_or_default(),
            iteration: selected.len() + 1,
            bm25_rank: candidates[winner].rank,
        });
        state.downweight_projection(&projections[winner], config.lambda)?;
    };

    Ok(RerankedSelection {
        selected,
        stopped_by,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderCoverage {
    pub order: usize,
    pub covered: f64,
    pub total: f64,
    /// `covered / total`, absent when the source has no n-grams of this order.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub orders: Vec<OrderCoverage>,
}

impl CoverageReport {
    pub fn fraction(&self, order: usize) -> Option<f64> {
        self.orders.iter().find(|o| o.order == order).and_then(|o| o.fraction)
    }
}

/// Share of the source's n-gram mass found in the multiset union of the
/// selected examples' sources, per order.
pub fn coverage_report(
    source_tokens: &[String],
    selected_sources: &[&[String]],
    config: NGramConfig,
) -> CoverageReport {
    let source = NGramMultiset::extract(source_tokens, config);
    let selected: Vec<NGramMultiset> = selected_sources
        .iter()
        .map(|s| NGramMultiset::extract(s, config))
        .collect();
    let orders = config
        .orders()
        .map(|n| {
            let grams = source.order(n).expect("order within config");
            // fold from +0.0: an empty f64 sum() is -0.0
            let total = grams.values().fold(0.0, |a, c| a + c);
            let covered = grams
                .iter()
                .map(|(g, c)| {
                    let best = selected.iter().map(|m| m.count(g)).fold(0.0, f64::max);
                    best.min(*c)
                })
                .fold(0.0, |a, c| a + c);
            OrderCoverage {
                order: n,
                covered,
                total,
                fraction: (total > 0.0).then(|| covered / total),
            }
        })
        .collect();
    CoverageReport { orders }
}

/// Pairs retrieved candidates with their datastore sources.
pub fn pool_from<'a>(
    retrieved: &[RetrievalCandidate],
    datastore: &ExampleLookup<'a>,
) -> Result<Vec<PoolCandidate<'a>>> {
    retrieved
        .iter()
        .map(|c| {
            let ex = datastore.get(c.id).ok_or_else(|| {
                Error::Integrity(format!("retrieved id {} is missing from the datastore", c.id))
            })?;
            Ok(PoolCandidate {
                id: c.id,
                rank: c.rank,
                source_tokens: &ex.source_tokens,
            })
        })
        .collect()
}

/// BM25 retrieval followed by re-ranking for one test source.
pub fn retrieve_and_rerank(
    index: &Bm25Index,
    datastore: &ExampleLookup<'_>,
    source_tokens: &[String],
    pool_size: usize,
    config: &RerankConfig,
) -> Result<(Vec<RetrievalCandidate>, RerankedSelection)> {
    let retrieved = index.retrieve(source_tokens, pool_size);
    let pool = pool_from(&retrieved, datastore)?;
    let selection = rerank(source_tokens, &pool, config)?;
    Ok((retrieved, selection))
}

/// One line of a selection dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub test_id: ExampleId,
    pub source: String,
    pub retrieved: Vec<RetrievalCandidate>,
    pub selection: RerankedSelection,
    pub coverage: CoverageReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn pool(sources: &[Vec<String>]) -> Vec<PoolCandidate<'_>> {
        sources
            .iter()
            .enumerate()
            .map(|(i, s)| PoolCandidate {
                id: ExampleId(i as u64 + 1),
                rank: i + 1,
                source_tokens: s,
            })
            .collect()
    }

    fn unigram_lambda0() -> RerankConfig {
        RerankConfig {
            lambda: 0.0,
            threshold: 1e-9,
            ngram: NGramConfig::new(1, 1).unwrap(),
            ..RerankConfig::default()
        }
    }

    #[test]
    fn lambda_zero_covers_new_terms_only() {
        let src = toks("a b c d");
        let sources = vec![toks("a b c q"), toks("c d z w"), toks("a b x y")];
        let sel = rerank(&src, &pool(&sources), &unigram_lambda0()).unwrap();
        assert_eq!(sel.ids(), [ExampleId(1), ExampleId(2)]);
        assert_eq!(sel.selected[0].score, 0.75);
        assert_eq!(sel.selected[1].score, 1.0);
        assert_eq!(sel.stopped_by, StopReason::Threshold);

        let chosen: Vec<&[String]> = vec![&sources[0], &sources[1]];
        let cov = coverage_report(&src, &chosen, NGramConfig::new(1, 1).unwrap());
        assert_eq!(cov.fraction(1), Some(1.0));
    }

    #[test]
    fn exact_copy_is_selected_first() {
        let src = toks("the patient should take one tablet");
        let sources = vec![toks("the patient"), toks("the patient should take one tablet"), toks("one tablet")];
        let cfg = RerankConfig {
            threshold: 0.5,
            ..RerankConfig::default()
        };
        let sel = rerank(&src, &pool(&sources), &cfg).unwrap();
        assert_eq!(sel.selected[0].id, ExampleId(2));
        assert_eq!(sel.selected[0].score, 1.0);
    }

    #[test]
    fn stop_reasons() {
        let src = toks("a b");
        let cfg = unigram_lambda0();
        let empty = rerank(&src, &[], &cfg).unwrap();
        assert!(empty.selected.is_empty());
        assert_eq!(empty.stopped_by, StopReason::Threshold);

        let sources = vec![toks("a"), toks("b")];
        let sel = rerank(&src, &pool(&sources), &RerankConfig { lambda: 1.0, ..cfg }).unwrap();
        assert_eq!(sel.stopped_by, StopReason::PoolExhausted);
        assert_eq!(sel.selected.len(), 2);

        let sel = rerank(&src, &pool(&sources), &RerankConfig { q_max: 1, ..cfg }).unwrap();
        assert_eq!(sel.stopped_by, StopReason::QMax);
        assert_eq!(sel.selected.len(), 1);
    }

    #[test]
    fn ties_go_to_better_bm25_rank() {
        let src = toks("a b");
        let sources = vec![toks("b"), toks("a")];
        let sel = rerank(&src, &pool(&sources), &RerankConfig { q_max: 1, ..unigram_lambda0() }).unwrap();
        assert_eq!(sel.selected[0].id, ExampleId(1));
    }

    #[test]
    fn default_threshold_needs_full_coverage_first() {
        let src = toks("a b c");
        let sources = vec![toks("a b"), toks("a b c"), toks("a b c")];
        let sel = rerank(&src, &pool(&sources), &RerankConfig::default()).unwrap();
        // The copy scores 1.0; with lambda 0.1 the duplicate then scores 10.
        // "a b" never matches the trigram, so it scores 0 and selection stops.
        assert_eq!(sel.ids(), [ExampleId(2), ExampleId(3)]);
        assert!((sel.selected[1].score - 10.0).abs() < 1e-9);
        assert_eq!(sel.stopped_by, StopReason::Threshold);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let src = toks("a");
        for cfg in [
            RerankConfig { lambda: 1.5, ..RerankConfig::default() },
            RerankConfig { threshold: 0.0, ..RerankConfig::default() },
            RerankConfig { q_max: 0, ..RerankConfig::default() },
        ] {
            assert!(matches!(rerank(&src, &[], &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn coverage_edge_cases() {
        let src = toks("a b c");
        let cfg = NGramConfig::default();
        let none = coverage_report(&src, &[], cfg);
        assert_eq!(none.fraction(1), Some(0.0));
        assert_eq!(none.fraction(4), None);
        let full = coverage_report(&src, &[&src], cfg);
        for n in 1..=3 {
            assert_eq!(full.fraction(n), Some(1.0));
        }
    }
}
