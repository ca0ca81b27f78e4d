//! Selection of in-context examples for machine-translation prompting.
//!
//! The pipeline is: load and filter a parallel corpus ([`corpus`]), index its
//! source side with Okapi BM25 ([`bm25`]), re-rank the top candidates for each
//! test source by greedy n-gram recall coverage ([`rerank`], built on
//! [`ngram`]), assemble prompts ([`prompting`]), generate with a pluggable
//! backend ([`backend`]) and score with BLEU ([`metrics`]).

pub mod backend;
pub mod bm25;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod ngram;
pub mod prompting;
pub mod rerank;

pub use bm25::{Bm25Index, Bm25Params, RetrievalCandidate};
pub use corpus::{Corpus, CorpusRole, ExampleId, ExampleLookup, FilterConfig, ParallelExample, Tokenizer};
pub use error::{Error, Result};
pub use metrics::{BleuScore, OverlapStats};
pub use ngram::{AverageOver, MatchedCountMode, NGramConfig, NGramMultiset, SourceCoverageState};
pub use prompting::{AssembledPrompt, OrderPolicy, PromptPlan, PromptTemplate, TaskPromptRanking};
pub use rerank::{RerankConfig, RerankedSelection, StopReason};
