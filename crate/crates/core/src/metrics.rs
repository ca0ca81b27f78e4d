//! BLEU, Pearson correlation and prompt/test overlap statistics.
//!
//! BLEU uses this crate's [`Tokenizer`], not sacreBLEU's `13a` tokenizer, so
//! scores are comparable with each other but not with published numbers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelExample, Tokenizer};
use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0..=100.
    pub score: f64,
    /// Modified n-gram precisions as fractions, orders 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    /// True when add-one smoothing changed at least one precision.
    pub smoothed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct BleuStats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_length: usize,
    ref_length: usize,
}

impl BleuStats {
    fn of(hyp: &[String], reference: &[String]) -> Self {
        let mut stats = BleuStats {
            hyp_length: hyp.len(),
            ref_length: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_insert(0) += 1;
            }
            let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_insert(0) += 1;
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        }
        stats
    }

    fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_length += other.hyp_length;
        self.ref_length += other.ref_length;
    }

    fn score(&self, smooth: bool) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        let mut smoothed = false;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n], self.totals[n]);
            precisions[n] = if smooth && n >= 1 && m == 0 {
                smoothed = true;
                1.0 / (t + 1) as f64
            } else if t == 0 {
                0.0
            } else {
                m as f64 / t as f64
            };
        }
        let brevity_penalty = if self.hyp_length == 0 {
            0.0
        } else if self.hyp_length >= self.ref_length {
            1.0
        } else {
            (1.0 - self.ref_length as f64 / self.hyp_length as f64).exp()
        };
        let score = if brevity_penalty == 0.0 || precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * log_mean.exp()
        };
        BleuScore {
            score,
            precisions,
            brevity_penalty,
            hyp_length: self.hyp_length,
            ref_length: self.ref_length,
            matches: self.matches,
            totals: self.totals,
            smoothed,
        }
    }
}

/// Unsmoothed corpus BLEU over pre-tokenized sentences.
pub fn corpus_bleu_tokens(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&BleuStats::of(h, r));
    }
    Ok(total.score(false))
}

/// Unsmoothed corpus BLEU; text is tokenized with the default tokenizer.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<BleuScore> {
    let t = Tokenizer::default();
    let hyps: Vec<_> = hypotheses.iter().map(|h| t.tokenize(h.as_ref())).collect();
    let refs: Vec<_> = references.iter().map(|r| t.tokenize(r.as_ref())).collect();
    corpus_bleu_tokens(&hyps, &refs)
}

/// Sentence BLEU with add-one smoothing of zero matches at orders 2..=4.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> BleuScore {
    let t = Tokenizer::default();
    BleuStats::of(&t.tokenize(hypothesis), &t.tokenize(reference)).score(true)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!("{} xs for {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Undefined(format!(
            "correlation needs at least 2 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Keeps at most twice the source length in whitespace tokens.
pub fn truncate_output(text: &str, source_token_count: usize) -> String {
    text.split_whitespace()
        .take(2 * source_token_count)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-sentence overlap measurements behind [`OverlapStats`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapProfile {
    /// sentence BLEU of the concatenated prompt sources against the test source.
    pub bleu_src: Vec<f64>,
    /// sentence BLEU of the concatenated prompt targets against the reference.
    pub bleu_tgt: Vec<f64>,
    /// sentence BLEU of the system output against the reference.
    pub bleu_output: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub avg_bleu_src: f64,
    pub avg_bleu_tgt: f64,
    pub corr_src: f64,
    pub corr_tgt: f64,
    pub n: usize,
}

pub fn overlap_profile(
    prompt_sets: &[Vec<&ParallelExample>],
    test_pairs: &[&ParallelExample],
    system_outputs: &[String],
) -> Result<OverlapProfile> {
    if prompt_sets.len() != test_pairs.len() || test_pairs.len() != system_outputs.len() {
        return Err(Error::Contract(format!(
            "misaligned inputs: {} prompt sets, {} test pairs, {} outputs",
            prompt_sets.len(),
            test_pairs.len(),
            system_outputs.len()
        )));
    }
    let mut profile = OverlapProfile::default();
    for ((prompts, test), output) in prompt_sets.iter().zip(test_pairs).zip(system_outputs) {
        let sources = prompts.iter().map(|e| e.source.as_str()).collect::<Vec<_>>().join(" ");
        let targets = prompts.iter().map(|e| e.target.as_str()).collect::<Vec<_>>().join(" ");
        profile.bleu_src.push(sentence_bleu(&sources, &test.source).score);
        profile.bleu_tgt.push(sentence_bleu(&targets, &test.target).score);
        profile.bleu_output.push(sentence_bleu(output, &test.target).score);
    }
    Ok(profile)
}

impl OverlapProfile {
    pub fn len(&self) -> usize {
        self.bleu_src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bleu_src.is_empty()
    }

    pub fn avg_bleu_src(&self) -> f64 {
        mean(&self.bleu_src)
    }

    pub fn avg_bleu_tgt(&self) -> f64 {
        mean(&self.bleu_tgt)
    }

    pub fn corr_src(&self) -> Result<f64> {
        pearson(&self.bleu_output, &self.bleu_src)
    }

    pub fn corr_tgt(&self) -> Result<f64> {
        pearson(&self.bleu_output, &self.bleu_tgt)
    }

    pub fn stats(&self) -> Result<OverlapStats> {
        Ok(OverlapStats {
            avg_bleu_src: self.avg_bleu_src(),
            avg_bleu_tgt: self.avg_bleu_tgt(),
            corr_src: self.corr_src()?,
            corr_tgt: self.corr_tgt()?,
            n: self.len(),
        })
    }
}

pub fn overlap_stats(
    prompt_sets: &[Vec<&ParallelExample>],
    test_pairs: &[&ParallelExample],
    system_outputs: &[String],
) -> Result<OverlapStats> {
    overlap_profile(prompt_sets, test_pairs, system_outputs)?.stats()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
