use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use icmt_core::backend::{generate_with_retries, Backend, BackendError, GenerationRequest};
use icmt_core::bm25::Bm25Index;
use icmt_core::metrics::{corpus_bleu, overlap_profile, truncate_output};
use icmt_core::prompting::{assemble_prompt, sample_pool, select_task_prompts, PromptRecord, TaskSelectionConfig};
use icmt_core::rerank::{coverage_report, retrieve_and_rerank, CoverageReport, SelectionRecord};
use icmt_core::{
    AssembledPrompt, BleuScore, Corpus, CorpusRole, Error, ExampleId, ExampleLookup, ParallelExample, PromptPlan,
    PromptTemplate, RerankConfig, TaskPromptRanking,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;

pub fn run(config: &RunConfig) -> anyhow::Result<()> {
    write_config(config)?;
    match &config.command {
        CommandConfig::BuildIndex(c) => build_index(c),
        CommandConfig::RetrieveRerank(c) => retrieve_rerank(c),
        CommandConfig::SelectTaskPrompt(c) => select_task_prompt(c, config.seed),
        CommandConfig::TranslateEval(c) => translate_eval(c),
        CommandConfig::AblateDatastore(c) => ablate_datastore(c, config.seed),
    }
}

pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_config(config: &RunConfig) -> anyhow::Result<()> {
    let path = sidecar(config.command.out(), ".config.json");
    let text = serde_json::to_string_pretty(config)? + "\n";
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexSummary {
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub vocabulary_size: usize,
    pub fingerprint: String,
}

fn build_index(c: &BuildIndexConfig) -> anyhow::Result<()> {
    c.bm25.validate()?;
    let corpus = c.preprocessing.datastore(&c.train)?;
    let index = Bm25Index::build(&corpus, c.bm25)?;
    index.save(&c.out)?;
    let summary = IndexSummary {
        doc_count: index.doc_count(),
        avg_doc_length: index.avg_doc_length(),
        vocabulary_size: index.vocabulary_size(),
        fingerprint: index.fingerprint().to_string(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn retrieve_rerank(c: &RetrieveRerankConfig) -> anyhow::Result<()> {
    c.rerank.validate()?;
    if c.pool_size < 1 {
        bail!(Error::Config("pool_size must be at least 1".into()));
    }
    let datastore = c.preprocessing.datastore(&c.train)?;
    let index = Bm25Index::load_for(&c.index, &datastore)?;
    let test = c.preprocessing.eval_set(&c.test, CorpusRole::Test)?;
    let stopwords = c.stopwords.as_deref().map(read_stopwords).transpose()?;
    let records = select_for_tests(&index, &datastore, &test, c.pool_size, &c.rerank, stopwords.as_ref())?;
    write_jsonl(&c.out, &records)
}

/// Retrieval and re-ranking for every test source, in test order.
pub fn select_for_tests(
    index: &Bm25Index,
    datastore: &Corpus,
    test: &Corpus,
    pool_size: usize,
    rerank: &RerankConfig,
    stopwords: Option<&HashSet<String>>,
) -> icmt_core::Result<Vec<SelectionRecord>> {
    let lookup = ExampleLookup::new(datastore);
    test.examples
        .par_iter()
        .map(|ex| {
            let (retrieved, selection) = match stopwords {
                Some(stop) => {
                    let query: Vec<String> =
                        ex.source_tokens.iter().filter(|t| !stop.contains(*t)).cloned().collect();
                    let retrieved = index.retrieve(&query, pool_size);
                    let pool = icmt_core::rerank::pool_from(&retrieved, &lookup)?;
                    let selection = icmt_core::rerank::rerank(&ex.source_tokens, &pool, rerank)?;
                    (retrieved, selection)
                }
                None => retrieve_and_rerank(index, &lookup, &ex.source_tokens, pool_size, rerank)?,
            };
            let chosen: Vec<&[String]> = selection
                .ids()
                .iter()
                .map(|id| lookup.get(*id).expect("selected from the datastore").source_tokens.as_slice())
                .collect();
            Ok(SelectionRecord {
                test_id: ex.id,
                source: ex.source.clone(),
                coverage: coverage_report(&ex.source_tokens, &chosen, rerank.ngram),
                retrieved,
                selection,
            })
        })
        .collect()
}

fn select_task_prompt(c: &SelectTaskPromptConfig, seed: u64) -> anyhow::Result<()> {
    let train = c.preprocessing.datastore(&c.train)?;
    let dev = c.preprocessing.eval_set(&c.dev, CorpusRole::Dev)?;
    if !c.dev.has_targets() {
        bail!(Error::Contract("task-level selection needs dev references".into()));
    }
    let pool = sample_pool(&train, c.pool_size.min(train.len()), seed)?;
    if c.pool_size > train.len() {
        log::warn!("pool size {} exceeds the datastore; using all {} examples", c.pool_size, train.len());
    }
    let backend = c.backend.build(&c.template)?;
    let ranking = select_task_prompts(
        &pool,
        &dev,
        &backend,
        &TaskSelectionConfig {
            template: c.template.clone(),
            dev_subsample: c.dev_subsample,
            retries: c.backend.retries,
            concurrency: c.backend.concurrency,
        },
    )?;
    write_jsonl(&c.out, [&ranking])?;
    if !ranking.complete {
        let reason = ranking.failures.first().map_or("unknown", |f| f.error.as_str());
        bail!(Error::Backend(BackendError::Transport(format!(
            "task-level selection aborted after {} of {} pool examples: {reason}",
            ranking.ranked.len(),
            ranking.pool_size
        ))));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub test_id: ExampleId,
    pub source: String,
    pub reference: String,
    pub output: String,
    pub prompt: PromptRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalStats {
    pub name: String,
    pub n: usize,
    pub bleu: f64,
    pub avg_bleu_src: f64,
    pub avg_bleu_tgt: f64,
    /// Absent when the correlation is undefined (fewer than two points or
    /// constant overlap).
    pub corr_src: Option<f64>,
    pub corr_tgt: Option<f64>,
}

/// The examples that go into one test sentence's prompt.
pub struct PromptJob<'a> {
    pub test: &'a ParallelExample,
    pub task: Vec<&'a ParallelExample>,
    pub retrieved: Vec<&'a ParallelExample>,
}

pub struct Translation {
    pub prompt: AssembledPrompt,
    pub output: String,
}

/// Assembles, generates and truncates for every job, preserving order.
pub fn translate_jobs(
    jobs: &[PromptJob<'_>],
    template: &PromptTemplate,
    plan: &PromptPlan,
    backend: &dyn Backend,
    retries: usize,
    concurrency: usize,
) -> anyhow::Result<Vec<Translation>> {
    let threads = rayon::ThreadPoolBuilder::new().num_threads(concurrency.max(1)).build()?;
    let results: Vec<icmt_core::Result<Translation>> = threads.install(|| {
        jobs.par_iter()
            .map(|job| {
                let prompt = assemble_prompt(&job.task, &job.retrieved, &job.test.source, template, plan)?;
                let n = job.test.source_tokens.len().max(1);
                let request = GenerationRequest::new(prompt.text.clone(), 2 * n);
                let completion = generate_with_retries(backend, &request, retries)?.completion;
                Ok(Translation {
                    output: truncate_output(&completion, n),
                    prompt,
                })
            })
            .collect()
    });
    Ok(results.into_iter().collect::<icmt_core::Result<Vec<_>>>()?)
}

/// BLEU of the outputs plus overlap statistics between prompts and test pairs.
pub fn evaluate(
    name: &str,
    jobs: &[PromptJob<'_>],
    translations: &[Translation],
) -> anyhow::Result<(BleuScore, EvalStats)> {
    let outputs: Vec<String> = translations.iter().map(|t| t.output.clone()).collect();
    let refs: Vec<&str> = jobs.iter().map(|j| j.test.target.as_str()).collect();
    let bleu = corpus_bleu(&outputs, &refs)?;
    let prompt_sets: Vec<Vec<&ParallelExample>> = jobs
        .iter()
        .map(|j| j.task.iter().chain(&j.retrieved).copied().collect())
        .collect();
    let tests: Vec<&ParallelExample> = jobs.iter().map(|j| j.test).collect();
    let profile = overlap_profile(&prompt_sets, &tests, &outputs)?;
    let stats = EvalStats {
        name: name.to_string(),
        n: profile.len(),
        bleu: bleu.score,
        avg_bleu_src: profile.avg_bleu_src(),
        avg_bleu_tgt: profile.avg_bleu_tgt(),
        corr_src: profile.corr_src().ok(),
        corr_tgt: profile.corr_tgt().ok(),
    };
    Ok((bleu, stats))
}

fn translate_eval(c: &TranslateEvalConfig) -> anyhow::Result<()> {
    c.plan.validate()?;
    if !c.test.has_targets() {
        bail!(Error::Contract("translate-eval needs test references".into()));
    }
    let datastore = c.preprocessing.datastore(&c.train)?;
    let lookup = ExampleLookup::new(&datastore);
    let test = c.preprocessing.eval_set(&c.test, CorpusRole::Test)?;

    let task: Vec<&ParallelExample> = match (&c.ranking, c.plan.p) {
        (_, 0) => Vec::new(),
        (None, _) => bail!(Error::Contract("p > 0 needs a task-level ranking".into())),
        (Some(path), p) => {
            let ranking: Vec<TaskPromptRanking> = read_jsonl(path)?;
            let ranking = ranking
                .into_iter()
                .next()
                .ok_or_else(|| Error::Contract(format!("{} holds no ranking", path.display())))?;
            if ranking.ranked.len() < p {
                bail!(Error::Contract(format!("ranking has {} examples, p = {p}", ranking.ranked.len())));
            }
            ranking.ranked[..p]
                .iter()
                .map(|s| lookup.get(s.id).ok_or_else(|| missing(s.id)))
                .collect::<icmt_core::Result<_>>()?
        }
    };
    let selections: Vec<SelectionRecord> = match (&c.selection, c.plan.q_max) {
        (_, 0) => Vec::new(),
        (None, _) => bail!(Error::Contract("q_max > 0 needs a selection dump".into())),
        (Some(path), _) => read_jsonl(path)?,
    };
    if c.plan.q_max > 0 && selections.len() != test.len() {
        bail!(Error::Contract(format!(
            "selection dump has {} records for {} test sentences",
            selections.len(),
            test.len()
        )));
    }

    let jobs = test
        .examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let retrieved = match selections.get(i) {
                Some(rec) if rec.test_id != ex.id => {
                    return Err(Error::Contract(format!(
                        "selection record {i} is for test {} but test sentence {i} is {}",
                        rec.test_id, ex.id
                    )))
                }
                Some(rec) => rec
                    .selection
                    .ids()
                    .into_iter()
                    .take(c.plan.q_max)
                    .map(|id| lookup.get(id).ok_or_else(|| missing(id)))
                    .collect::<icmt_core::Result<_>>()?,
                None => Vec::new(),
            };
            Ok(PromptJob {
                test: ex,
                task: task.clone(),
                retrieved,
            })
        })
        .collect::<icmt_core::Result<Vec<_>>>()?;

    let backend = c.backend.build(&c.template)?;
    let translations = translate_jobs(&jobs, &c.template, &c.plan, &backend, c.backend.retries, c.backend.concurrency)?;
    let (_, stats) = evaluate(&c.name, &jobs, &translations)?;
    write_jsonl(
        &c.out,
        jobs.iter().zip(&translations).map(|(j, t)| TranslationRecord {
            test_id: j.test.id,
            source: j.test.source.clone(),
            reference: j.test.target.clone(),
            output: t.output.clone(),
            prompt: PromptRecord::new(j.test.id, &t.prompt),
        }),
    )?;
    write_jsonl(&sidecar(&c.out, ".stats.jsonl"), [&stats])?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn missing(id: ExampleId) -> Error {
    Error::Integrity(format!("example {id} is not in the datastore"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRecord {
    pub size: String,
    pub datastore_examples: usize,
    pub q: usize,
    pub bleu: f64,
    /// Mean per-order covered fraction over test sources that have n-grams of that order.
    pub mean_coverage: Vec<Option<f64>>,
    pub mean_selected: f64,
    pub n: usize,
}

fn mean_coverage(reports: &[CoverageReport], orders: usize) -> Vec<Option<f64>> {
    (0..orders)
        .map(|i| {
            let fs: Vec<f64> = reports.iter().filter_map(|r| r.orders[i].fraction).collect();
            (!fs.is_empty()).then(|| fs.iter().sum::<f64>() / fs.len() as f64)
        })
        .collect()
}

fn ablate_datastore(c: &AblateDatastoreConfig, seed: u64) -> anyhow::Result<()> {
    c.rerank.validate()?;
    if c.q_grid.is_empty() || c.q_grid.contains(&0) || c.sizes.is_empty() {
        bail!(Error::Config("ablation needs sizes and a q grid of positive values".into()));
    }
    if !c.test.has_targets() {
        bail!(Error::Contract("ablate-datastore needs test references".into()));
    }
    let full = c.preprocessing.datastore(&c.train)?;
    let test = c.preprocessing.eval_set(&c.test, CorpusRole::Test)?;
    let counts = c
        .sizes
        .iter()
        .map(|s| resolve_size(s, full.len()))
        .collect::<icmt_core::Result<Vec<_>>>()?;
    let subsets = full.nested_subsamples(&counts, seed)?;
    let q_top = *c.q_grid.iter().max().expect("non-empty grid");
    let rerank = RerankConfig {
        q_max: q_top,
        ..c.rerank
    };
    let backend = c.backend.build(&c.template)?;

    let mut records = Vec::new();
    for (spec, datastore) in c.sizes.iter().zip(&subsets) {
        let index = Bm25Index::build(datastore, c.bm25)?;
        let lookup = ExampleLookup::new(datastore);
        let selections = select_for_tests(&index, datastore, &test, c.pool_size, &rerank, None)?;
        for &q in &c.q_grid {
            let jobs: Vec<PromptJob> = test
                .examples
                .iter()
                .zip(&selections)
                .map(|(ex, sel)| PromptJob {
                    test: ex,
                    task: Vec::new(),
                    retrieved: sel.selection.ids().iter().take(q).map(|id| lookup.get(*id).unwrap()).collect(),
                })
                .collect();
            let reports: Vec<CoverageReport> = jobs
                .iter()
                .map(|j| {
                    let chosen: Vec<&[String]> = j.retrieved.iter().map(|e| e.source_tokens.as_slice()).collect();
                    coverage_report(&j.test.source_tokens, &chosen, rerank.ngram)
                })
                .collect();
            let plan = PromptPlan {
                p: 0,
                q_max: q,
                token_budget: c.token_budget,
                ..PromptPlan::default()
            };
            let translations =
                translate_jobs(&jobs, &c.template, &plan, &backend, c.backend.retries, c.backend.concurrency)?;
            let outputs: Vec<&str> = translations.iter().map(|t| t.output.as_str()).collect();
            let refs: Vec<&str> = test.examples.iter().map(|e| e.target.as_str()).collect();
            let orders = rerank.ngram.orders().count();
            records.push(AblationRecord {
                size: spec.clone(),
                datastore_examples: datastore.len(),
                q,
                bleu: corpus_bleu(&outputs, &refs)?.score,
                mean_coverage: mean_coverage(&reports, orders),
                mean_selected: jobs.iter().map(|j| j.retrieved.len()).sum::<usize>() as f64 / jobs.len().max(1) as f64,
                n: jobs.len(),
            });
        }
    }
    write_jsonl(&c.out, &records)
}

/// Process exit code for an error: 2 for I/O and environment failures, 1 for
/// everything else (bad inputs, broken contracts).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_environmental() || matches!(e, Error::Integrity(_)) { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(e.to_string()))
        .with_context(|| format!("reading {}", path.display()))
}
