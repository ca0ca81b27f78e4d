//! Prompt templates, prompt assembly under a token budget, and task-level
//! example selection by dev-set BLEU.
//!
//! With the default template a prompt looks like
//!
//! ```text
//! Bei PROMESS1 werden drei Hauptziele verfolgt. = PROMESS1 has three main objectives.
//! Welche Risiken sind mit Sebivo verbunden? = What are the risks associated with Sebivo?
//! Welche Risiken sind mit Poulvac FluFend H5N3 RG verbunden? =
//! ```
//!
//! Inside slot text, backslashes, newlines and occurrences of the delimiter
//! between the slots (`=` here) are escaped with a backslash (`\\`, `\n`,
//! `\=`), so rendered prompts always parse back into the same examples.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{generate_with_retries, Backend, GenerationRequest};
use crate::corpus::{Corpus, ExampleId, ParallelExample};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, truncate_output};

const SOURCE_SLOT: &str = "{source}";
const TARGET_SLOT: &str = "{target}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TemplateSpec", into = "TemplateSpec")]
pub struct PromptTemplate {
    pattern: String,
    separator: String,
    prefix: String,
    middle: String,
    suffix: String,
    delimiter: String,
}

#[derive(Serialize, Deserialize)]
struct TemplateSpec {
    pattern: String,
    separator: String,
}

impl TryFrom<TemplateSpec> for PromptTemplate {
    type Error = Error;

    fn try_from(spec: TemplateSpec) -> Result<Self> {
        PromptTemplate::new(spec.pattern, spec.separator)
    }
}

impl From<PromptTemplate> for TemplateSpec {
    fn from(t: PromptTemplate) -> Self {
        TemplateSpec {
            pattern: t.pattern,
            separator: t.separator,
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new("{source} = {target}", "\n").expect("default template is valid")
    }
}

/// Examples and test source recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub examples: Vec<(String, String)>,
    pub test_source: String,
}

impl PromptTemplate {
    /// `pattern` must contain `{source}` then `{target}`, once each, separated
    /// by text with at least one non-space character. `separator` must
    /// contain a newline.
    pub fn new(pattern: impl Into<String>, separator: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let separator = separator.into();
        let bad = |why: &str| Error::Config(format!("template {pattern:?}: {why}"));
        if pattern.matches(SOURCE_SLOT).count() != 1 || pattern.matches(TARGET_SLOT).count() != 1 {
            return Err(bad("needs exactly one {source} and one {target}"));
        }
        let s = pattern.find(SOURCE_SLOT).unwrap();
        let t = pattern.find(TARGET_SLOT).unwrap();
        if t < s {
            return Err(bad("{source} must come before {target}"));
        }
        let prefix = pattern[..s].to_string();
        let middle = pattern[s + SOURCE_SLOT.len()..t].to_string();
        let suffix = pattern[t + TARGET_SLOT.len()..].to_string();
        if middle.trim().is_empty() {
            return Err(bad("the text between the slots must not be blank"));
        }
        if !separator.contains('\n') || [&prefix, &middle, &suffix].iter().any(|p| p.contains('\n')) {
            return Err(bad("the separator must contain a newline and the pattern must not"));
        }
        if pattern.contains('\\') || separator.contains('\\') {
            return Err(bad("backslashes are reserved for escaping"));
        }
        let delimiter = middle.trim().to_string();
        Ok(PromptTemplate {
            pattern,
            separator,
            prefix,
            middle,
            suffix,
            delimiter,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    fn escape(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for (i, c) in text.char_indices() {
            match c {
                '\n' => out.push_str("\\n"),
                '\\' => out.push_str("\\\\"),
                c => {
                    if text[i..].starts_with(&self.delimiter) {
                        out.push('\\');
                    }
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn render_example(&self, source: &str, target: &str) -> String {
        format!(
            "{}{}{}{}{}",
            self.prefix,
            self.escape(source),
            self.middle,
            self.escape(target),
            self.suffix
        )
    }

    /// The final line: the pattern up to the target slot, trailing spaces trimmed.
    pub fn render_stub(&self, test_source: &str) -> String {
        format!("{}{}{}", self.prefix, self.escape(test_source), self.middle.trim_end())
    }

    pub fn render<'a, I>(&self, examples: I, test_source: &str) -> String
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut out = String::new();
        for (s, t) in examples {
            out.push_str(&self.render_example(s, t));
            out.push_str(&self.separator);
        }
        out.push_str(&self.render_stub(test_source));
        out
    }

    pub fn parse(&self, text: &str) -> Result<ParsedPrompt> {
        let mut segments: Vec<&str> = text.split(self.separator.as_str()).collect();
        let stub = segments.pop().unwrap_or_default();
        let examples = segments
            .into_iter()
            .map(|seg| {
                let body = seg
                    .strip_prefix(self.prefix.as_str())
                    .and_then(|s| s.strip_suffix(self.suffix.as_str()))
                    .ok_or_else(|| Error::Contract(format!("line {seg:?} does not match the template")))?;
                let at = find_unescaped(body, &self.middle)
                    .ok_or_else(|| Error::Contract(format!("line {seg:?} has no slot delimiter")))?;
                Ok((unescape(&body[..at]), unescape(&body[at + self.middle.len()..])))
            })
            .collect::<Result<Vec<_>>>()?;
        let stub_end = self.middle.trim_end();
        let test_source = stub
            .strip_prefix(self.prefix.as_str())
            .and_then(|s| s.strip_suffix(stub_end))
            .filter(|s| find_unescaped(&format!("{s}{stub_end}"), stub_end) == Some(s.len()))
            .ok_or_else(|| Error::Contract(format!("last line {stub:?} is not a test-source stub")))?;
        Ok(ParsedPrompt {
            examples,
            test_source: unescape(test_source),
        })
    }
}

/// Byte offset of the first occurrence of `needle` that does not start inside
/// an escape sequence.
fn find_unescaped(haystack: &str, needle: &str) -> Option<usize> {
    let mut escaped = false;
    for (i, c) in haystack.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        if haystack[i..].starts_with(needle) {
            return Some(i);
        }
        if c == '\\' {
            escaped = true;
        }
    }
    None
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// First-selected (most similar) retrieved example nearest the start.
    #[default]
    MostSimilarLeft,
    /// First-selected retrieved example nearest the test source.
    MostSimilarRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    /// Task-level examples.
    pub p: usize,
    /// Maximum retrieved examples.
    pub q_max: usize,
    pub order_policy: OrderPolicy,
    /// Whitespace tokens allowed in the rendered prompt.
    pub token_budget: usize,
}

impl Default for PromptPlan {
    fn default() -> Self {
        PromptPlan {
            p: 0,
            q_max: 16,
            order_policy: OrderPolicy::MostSimilarLeft,
            token_budget: 3096,
        }
    }
}

impl PromptPlan {
    pub fn validate(&self) -> Result<()> {
        if self.p + self.q_max < 1 {
            return Err(Error::Config("a prompt plan needs p + q_max >= 1".into()));
        }
        if self.token_budget < 1 {
            return Err(Error::Config("token_budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TaskLevel,
    Retrieved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub id: ExampleId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    /// Examples in prompt order.
    pub examples: Vec<PromptEntry>,
    pub text: String,
    pub token_count: usize,
}

/// One line of a prompt dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub test_id: ExampleId,
    pub prompt_text: String,
    pub example_ids: Vec<ExampleId>,
    pub provenance: Vec<Provenance>,
    pub token_count: usize,
}

impl PromptRecord {
    pub fn new(test_id: ExampleId, prompt: &AssembledPrompt) -> Self {
        PromptRecord {
            test_id,
            prompt_text: prompt.text.clone(),
            example_ids: prompt.examples.iter().map(|e| e.id).collect(),
            provenance: prompt.examples.iter().map(|e| e.provenance).collect(),
            token_count: prompt.token_count,
        }
    }
}

fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lays out task-level examples, then retrieved examples (ordered by
/// `plan.order_policy`), then the test-source stub. Retrieved examples are
/// dropped least-similar first until the prompt fits `plan.token_budget`;
/// task-level examples are never dropped.
pub fn assemble_prompt(
    task_examples: &[&ParallelExample],
    retrieved: &[&ParallelExample],
    test_source: &str,
    template: &PromptTemplate,
    plan: &PromptPlan,
) -> Result<AssembledPrompt> {
    plan.validate()?;
    if task_examples.len() > plan.p || retrieved.len() > plan.q_max {
        return Err(Error::Contract(format!(
            "plan allows {}+{} examples, got {}+{}",
            plan.p,
            plan.q_max,
            task_examples.len(),
            retrieved.len()
        )));
    }

    let mut keep = retrieved.len();
    loop {
        let mut kept: Vec<&ParallelExample> = retrieved[..keep].to_vec();
        if plan.order_policy == OrderPolicy::MostSimilarRight {
            kept.reverse();
        }
        let ordered: Vec<(&ParallelExample, Provenance)> = task_examples
            .iter()
            .map(|e| (*e, Provenance::TaskLevel))
            .chain(kept.into_iter().map(|e| (e, Provenance::Retrieved)))
            .collect();
        let text = template.render(
            ordered.iter().map(|(e, _)| (e.source.as_str(), e.target.as_str())),
            test_source,
        );
        let token_count = whitespace_tokens(&text);
        if token_count <= plan.token_budget {
            return Ok(AssembledPrompt {
                examples: ordered
                    .iter()
                    .map(|(e, provenance)| PromptEntry {
                        id: e.id,
                        provenance: *provenance,
                    })
                    .collect(),
                text,
                token_count,
            });
        }
        if keep == 0 {
            return Err(Error::Budget(format!(
                "{token_count} tokens without retrieved examples, budget is {}",
                plan.token_budget
            )));
        }
        keep -= 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskPromptScore {
    pub id: ExampleId,
    pub dev_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPromptFailure {
    pub id: ExampleId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPromptRanking {
    /// Sorted by `dev_bleu` descending, ties by pool order.
    pub ranked: Vec<TaskPromptScore>,
    pub pool_size: usize,
    pub dev_size: usize,
    /// False when a backend failure stopped the evaluation early; `ranked`
    /// then holds only the examples that finished.
    pub complete: bool,
    pub failures: Vec<TaskPromptFailure>,
}

impl TaskPromptRanking {
    pub fn best(&self) -> Option<ExampleId> {
        self.ranked.first().map(|s| s.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSelectionConfig {
    pub template: PromptTemplate,
    /// Use only the first `n` dev pairs.
    pub dev_subsample: Option<usize>,
    /// Extra attempts per request after a transport error.
    pub retries: usize,
    /// Pool examples evaluated at once.
    pub concurrency: usize,
}

impl Default for TaskSelectionConfig {
    fn default() -> Self {
        TaskSelectionConfig {
            template: PromptTemplate::default(),
            dev_subsample: None,
            retries: 2,
            concurrency: 4,
        }
    }
}

/// Ranks pool examples as one-shot prompts by the corpus BLEU of the
/// generated dev translations (outputs truncated to twice the source length).
pub fn select_task_prompts(
    pool: &Corpus,
    dev: &Corpus,
    backend: &dyn Backend,
    config: &TaskSelectionConfig,
) -> Result<TaskPromptRanking> {
    let dev_pairs = match config.dev_subsample {
        Some(n) => &dev.examples[..n.min(dev.len())],
        None => &dev.examples[..],
    };
    if dev_pairs.is_empty() {
        return Err(Error::Contract("task-level selection needs dev pairs".into()));
    }
    let references: Vec<&str> = dev_pairs.iter().map(|e| e.target.as_str()).collect();
    let aborted = AtomicBool::new(false);

    let evaluate = |candidate: &ParallelExample| -> Option<std::result::Result<TaskPromptScore, TaskPromptFailure>> {
        let mut hyps = Vec::with_capacity(dev_pairs.len());
        for dev_ex in dev_pairs {
            if aborted.load(Ordering::Relaxed) {
                return None;
            }
            let source_len = dev_ex.source_tokens.len().max(1);
            let request = GenerationRequest::new(
                template_one_shot(&config.template, candidate, &dev_ex.source),
                2 * source_len,
            );
            match generate_with_retries(backend, &request, config.retries) {
                Ok(resp) => hyps.push(truncate_output(&resp.completion, source_len)),
                Err(e) => {
                    aborted.store(true, Ordering::Relaxed);
                    return Some(Err(TaskPromptFailure {
                        id: candidate.id,
                        error: e.to_string(),
                    }));
                }
            }
        }
        let bleu = corpus_bleu(&hyps, &references).expect("aligned by construction");
        Some(Ok(TaskPromptScore {
            id: candidate.id,
            dev_bleu: bleu.score,
        }))
    };

    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<_> = threads.install(|| pool.examples.par_iter().map(evaluate).collect());

    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    let mut finished = 0;
    for outcome in outcomes.into_iter().flatten() {
        finished += 1;
        match outcome {
            Ok(score) => ranked.push(score),
            Err(failure) => failures.push(failure),
        }
    }
    // Stable sort keeps pool order among equal scores.
    ranked.sort_by(|a, b| b.dev_bleu.total_cmp(&a.dev_bleu));
    Ok(TaskPromptRanking {
        ranked,
        pool_size: pool.len(),
        dev_size: dev_pairs.len(),
        complete: failures.is_empty() && finished == pool.len(),
        failures,
    })
}

fn template_one_shot(template: &PromptTemplate, example: &ParallelExample, test_source: &str) -> String {
    template.render([(example.source.as_str(), example.target.as_str())], test_source)
}

/// Uniform sample without replacement, returned in corpus order.
pub fn sample_pool(train: &Corpus, size: usize, seed: u64) -> Result<Corpus> {
    if size > train.len() {
        return Err(Error::Contract(format!(
            "cannot sample {size} examples from a corpus of {}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, train.len(), size).into_vec();
    picked.sort_unstable();
    Ok(Corpus::new(
        format!("{}-pool{size}", train.name),
        train.role,
        picked.into_iter().map(|i| train.examples[i].clone()).collect(),
    ))
}
