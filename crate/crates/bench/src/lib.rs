//! Synthetic parallel corpora for benchmarks and scale tests.
//!
//! Words are drawn from a Zipf distribution over a fixed vocabulary; the
//! "translation" of a word `wN` is `WN`, so target text mirrors the source.

use icmt_core::{Corpus, CorpusRole, ExampleId, ParallelExample, Tokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub examples: usize,
    pub vocabulary: u64,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            examples: 10_000,
            vocabulary: 50_000,
            zipf_exponent: 1.1,
            min_len: 5,
            max_len: 40,
            seed: 0,
        }
    }
}

pub struct SentenceSampler {
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    min_len: usize,
    max_len: usize,
}

impl SentenceSampler {
    pub fn new(spec: &SyntheticSpec) -> Self {
        SentenceSampler {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            zipf: Zipf::new(spec.vocabulary, spec.zipf_exponent).expect("valid zipf parameters"),
            min_len: spec.min_len,
            max_len: spec.max_len,
        }
    }

    pub fn words(&mut self) -> Vec<u64> {
        let len = self.rng.gen_range(self.min_len..=self.max_len);
        (0..len).map(|_| self.zipf.sample(&mut self.rng) as u64).collect()
    }

    pub fn pair(&mut self) -> (String, String) {
        render(&self.words())
    }
}

pub fn render(words: &[u64]) -> (String, String) {
    let source = words.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
    let target = words.iter().map(|w| format!("W{w}")).collect::<Vec<_>>().join(" ");
    (source, target)
}

pub fn corpus(spec: &SyntheticSpec, role: CorpusRole) -> Corpus {
    let tokenizer = Tokenizer::default();
    let mut sampler = SentenceSampler::new(spec);
    let examples = (0..spec.examples)
        .map(|i| {
            let (s, t) = sampler.pair();
            ParallelExample::new(ExampleId(i as u64), &s, &t, &tokenizer)
        })
        .collect();
    Corpus::new(format!("synthetic-{}", spec.seed), role, examples)
}

/// Query sources drawn from the same distribution under a different seed.
pub fn queries(spec: &SyntheticSpec, count: usize, seed: u64) -> Vec<Vec<String>> {
    let tokenizer = Tokenizer::default();
    let mut sampler = SentenceSampler::new(&SyntheticSpec { seed, ..*spec });
    (0..count).map(|_| tokenizer.tokenize(&sampler.pair().0)).collect()
}
