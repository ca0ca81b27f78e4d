//! Parallel corpus loading, punctuation normalization, length filtering and
//! word tokenization.
//!
//! # Punctuation map
//!
//! | input                                   | output        |
//! |-----------------------------------------|---------------|
//! | `‘ ’ ‚ ‛ ′` and backtick                | `'`           |
//! | `“ ” „ ‟ « » ″`                         | `"`           |
//! | `‐ ‑ ‒ – — ― −` (U+2010..U+2015, U+2212)| `-`           |
//! | `…`                                     | `...`         |
//! | tab, NBSP, U+2000..U+200A, U+202F, U+205F, U+3000 | space |
//! | soft hyphen, U+200B..U+200D, U+FEFF     | removed       |
//!
//! After mapping, runs of whitespace collapse to one space and the text is
//! trimmed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(pub u64);

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Word tokenizer shared by filtering, indexing, n-gram extraction and BLEU.
///
/// Text is split on whitespace; every non-alphanumeric character at the start
/// or end of a chunk becomes its own token. Characters inside a word
/// (`don't`, `H5N3`, `e-mail`) stay attached.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    #[serde(default)]
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn new(lowercase: bool) -> Self {
        Tokenizer { lowercase }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let chars: Vec<char> = chunk.chars().collect();
            let start = chars
                .iter()
                .position(|c| c.is_alphanumeric())
                .unwrap_or(chars.len());
            let end = chars
                .iter()
                .rposition(|c| c.is_alphanumeric())
                .map_or(start, |p| p + 1);
            for c in &chars[..start] {
                out.push(self.finish(c.to_string()));
            }
            if start < end {
                out.push(self.finish(chars[start..end].iter().collect()));
                for c in &chars[end..] {
                    out.push(self.finish(c.to_string()));
                }
            }
        }
        out
    }

    fn finish(&self, token: String) -> String {
        if self.lowercase {
            token.to_lowercase()
        } else {
            token
        }
    }
}

/// Applies the punctuation map from the module docs and collapses whitespace.
pub fn normalize_punctuation(text: &str) -> String {
    let mut mapped = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '`' => mapped.push('\''),
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}'
            | '\u{2033}' => mapped.push('"'),
            '\u{2010}'..='\u{2015}' | '\u{2212}' => mapped.push('-'),
            '\u{2026}' => mapped.push_str("..."),
            '\t' | '\u{00A0}' | '\u{2000}'..='\u{200A}' | '\u{202F}' | '\u{205F}' | '\u{3000}' => {
                mapped.push(' ')
            }
            '\u{00AD}' | '\u{200B}'..='\u{200D}' | '\u{FEFF}' => {}
            c => mapped.push(c),
        }
    }
    collapse_whitespace(&mapped)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: ExampleId,
    pub source: String,
    pub target: String,
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
}

impl ParallelExample {
    pub fn new(
        id: ExampleId,
        source: impl Into<String>,
        target: impl Into<String>,
        tokenizer: &Tokenizer,
    ) -> Self {
        let source = source.into();
        let target = target.into();
        ParallelExample {
            id,
            source_tokens: tokenizer.tokenize(&source),
            target_tokens: tokenizer.tokenize(&target),
            source,
            target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    /// Training data used as the retrieval datastore.
    Datastore,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub role: CorpusRole,
    pub examples: Vec<ParallelExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_tokens: usize,
    pub max_length_ratio: f64,
    pub normalize_punctuation: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_tokens: 250,
            max_length_ratio: 1.5,
            normalize_punctuation: true,
        }
    }
}

impl FilterConfig {
    /// No length or ratio limits; only normalization.
    pub fn normalize_only() -> Self {
        FilterConfig {
            max_tokens: usize::MAX,
            max_length_ratio: f64::INFINITY,
            normalize_punctuation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if !(self.max_length_ratio > 0.0) {
            return Err(Error::Config("max_length_ratio must be positive".into()));
        }
        Ok(())
    }

    fn keeps(&self, source_len: usize, target_len: usize) -> bool {
        if source_len == 0 || target_len == 0 {
            return false;
        }
        if source_len > self.max_tokens || target_len > self.max_tokens {
            return false;
        }
        let (lo, hi) = if source_len < target_len {
            (source_len, target_len)
        } else {
            (target_len, source_len)
        };
        hi as f64 / lo as f64 <= self.max_length_ratio
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<u64>,
    source: String,
    #[serde(default)]
    target: String,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: ExampleId,
    source: &'a str,
    target: &'a str,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            line.map(|mut l| {
                if l.ends_with('\r') {
                    l.pop();
                }
                l
            })
            .map_err(|e| Error::io(path, e))
        })
        .collect()
}

impl Corpus {
    pub fn new(name: impl Into<String>, role: CorpusRole, examples: Vec<ParallelExample>) -> Self {
        Corpus {
            name: name.into(),
            role,
            examples,
        }
    }

    /// Loads line-aligned source and target files. Ids are line numbers from 0.
    pub fn load_parallel(
        source_path: &Path,
        target_path: &Path,
        role: CorpusRole,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        let sources = read_lines(source_path)?;
        let targets = read_lines(target_path)?;
        if sources.len() != targets.len() {
            return Err(Error::Alignment {
                source_lines: sources.len(),
                target_lines: targets.len(),
            });
        }
        let examples = sources
            .into_iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (s, t))| ParallelExample::new(ExampleId(i as u64), s, t, tokenizer))
            .collect();
        Ok(Corpus::new(file_stem(source_path), role, examples))
    }

    /// Loads source lines only (targets left empty), for test inputs without references.
    pub fn load_sources(path: &Path, role: CorpusRole, tokenizer: &Tokenizer) -> Result<Self> {
        let examples = read_lines(path)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| ParallelExample::new(ExampleId(i as u64), s, "", tokenizer))
            .collect();
        Ok(Corpus::new(file_stem(path), role, examples))
    }

    /// Loads one JSON record per line: `{"id"?: int, "source": str, "target": str}`.
    /// Records without an id get their zero-based line position.
    pub fn load_jsonl(path: &Path, role: CorpusRole, tokenizer: &Tokenizer) -> Result<Self> {
        let mut examples = Vec::new();
        let mut seen = HashSet::new();
        for (line_no, line) in read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: line_no + 1,
                message: e.to_string(),
            })?;
            let id = ExampleId(record.id.unwrap_or(examples.len() as u64));
            if !seen.insert(id) {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    message: format!("duplicate id {id}"),
                });
            }
            examples.push(ParallelExample::new(id, record.source, record.target, tokenizer));
        }
        Ok(Corpus::new(file_stem(path), role, examples))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for ex in &self.examples {
            let record = JsonRecordOut {
                id: ex.id,
                source: &ex.source,
                target: &ex.target,
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: ExampleId) -> Option<&ParallelExample> {
        // Ids are usually positions; fall back to a scan when they are not.
        match self.examples.get(id.0 as usize) {
            Some(ex) if ex.id == id => Some(ex),
            _ => self.examples.iter().find(|ex| ex.id == id),
        }
    }

    /// Normalizes punctuation (when enabled) and drops pairs that are empty,
    /// longer than `max_tokens` on either side, or whose token length ratio
    /// `max/min` exceeds `max_length_ratio`. Survivors keep order and ids.
    pub fn normalize_and_filter(&self, config: &FilterConfig, tokenizer: &Tokenizer) -> Corpus {
        let examples = self
            .examples
            .iter()
            .filter_map(|ex| {
                let ex = if config.normalize_punctuation {
                    ParallelExample::new(
                        ex.id,
                        normalize_punctuation(&ex.source),
                        normalize_punctuation(&ex.target),
                        tokenizer,
                    )
                } else {
                    ex.clone()
                };
                config
                    .keeps(ex.source_tokens.len(), ex.target_tokens.len())
                    .then_some(ex)
            })
            .collect();
        Corpus::new(self.name.clone(), self.role, examples)
    }

    /// Normalizes punctuation without dropping anything (used for test inputs).
    pub fn normalized(&self, tokenizer: &Tokenizer) -> Corpus {
        let examples = self
            .examples
            .iter()
            .map(|ex| {
                ParallelExample::new(
                    ex.id,
                    normalize_punctuation(&ex.source),
                    normalize_punctuation(&ex.target),
                    tokenizer,
                )
            })
            .collect();
        Corpus::new(self.name.clone(), self.role, examples)
    }

    /// Drops exact (source, target) duplicates, keeping the first occurrence.
    pub fn dedup(&self) -> Corpus {
        let mut seen = HashSet::new();
        let examples = self
            .examples
            .iter()
            .filter(|ex| seen.insert((ex.source.as_str(), ex.target.as_str())))
            .cloned()
            .collect();
        Corpus::new(self.name.clone(), self.role, examples)
    }

    /// Seeded subsamples of the given sizes where each smaller subsample is
    /// contained in every larger one. Examples keep corpus order.
    pub fn nested_subsamples(&self, sizes: &[usize], seed: u64) -> Result<Vec<Corpus>> {
        if let Some(&too_big) = sizes.iter().find(|&&n| n > self.len()) {
            return Err(Error::Contract(format!(
                "cannot subsample {too_big} examples from a corpus of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(sizes
            .iter()
            .map(|&n| {
                let mut picked = order[..n].to_vec();
                picked.sort_unstable();
                Corpus::new(
                    format!("{}-{n}", self.name),
                    self.role,
                    picked.into_iter().map(|i| self.examples[i].clone()).collect(),
                )
            })
            .collect())
    }
}

/// Id-keyed access to a corpus whose ids are not positions.
#[derive(Debug, Clone)]
pub struct ExampleLookup<'a> {
    by_id: HashMap<ExampleId, &'a ParallelExample>,
}

impl<'a> ExampleLookup<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        ExampleLookup {
            by_id: corpus.examples.iter().map(|ex| (ex.id, ex)).collect(),
        }
    }

    pub fn get(&self, id: ExampleId) -> Option<&'a ParallelExample> {
        self.by_id.get(&id).copied()
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
