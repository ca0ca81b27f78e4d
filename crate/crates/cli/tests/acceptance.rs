//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use icmt_bench::SyntheticSpec;
use icmt_core::backend::CopyTargetBackend;
use icmt_core::ngram::NGramMultiset;
use icmt_core::prompting::{select_task_prompts, TaskSelectionConfig};
use icmt_core::rerank::{coverage_report, pool_from, rerank, PoolCandidate};
use icmt_core::{
    AverageOver, Bm25Index, Bm25Params, Corpus, CorpusRole, ExampleId, ExampleLookup, MatchedCountMode,
    NGramConfig, ParallelExample, RerankConfig, SourceCoverageState, StopReason, Tokenizer,
};
use oracles::{bleu_exhaustive, bm25_exhaustive, rerank_exhaustive, toks, OracleConfig, BLEU_CORPORA, BLEU_PAIRS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_of(pairs: &[(String, String)], role: CorpusRole) -> Corpus {
    let tok = Tokenizer::default();
    Corpus::new(
        "acceptance",
        role,
        pairs
            .iter()
            .enumerate()
            .map(|(i, (s, t))| ParallelExample::new(ExampleId(i as u64), s, t, &tok))
            .collect(),
    )
}

fn sources_corpus(sources: &[String]) -> Corpus {
    let pairs: Vec<(String, String)> = sources.iter().map(|s| (s.clone(), "t".to_string())).collect();
    corpus_of(&pairs, CorpusRole::Datastore)
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::Threshold => "threshold",
        StopReason::QMax => "q_max",
        StopReason::PoolExhausted => "pool_exhausted",
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: u8, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| ((b'a' + rng.gen_range(0..vocab)) as char).to_string()).collect()
}

fn rerank_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances = 400;
    for case in 0..instances {
        let source = random_tokens(&mut rng, 6, 12);
        let pool_len = rng.gen_range(0..=20);
        let pool: Vec<Vec<String>> = (0..pool_len).map(|_| random_tokens(&mut rng, 8, 12)).collect();
        let min_order = rng.gen_range(1..=4);
        let cfg = RerankConfig {
            lambda: *[0.0, 0.1, 0.5, 1.0, rng.gen_range(0.0..1.0)].choose(&mut rng).unwrap(),
            threshold: *[1e-9, 0.1, 1.0, 2.0, rng.gen_range(0.01..5.0)].choose(&mut rng).unwrap(),
            q_max: rng.gen_range(1..=8),
            ngram: NGramConfig::new(min_order, rng.gen_range(min_order..=4)).unwrap(),
            matched_count_mode: if case % 2 == 0 { MatchedCountMode::Original } else { MatchedCountMode::Current },
            average_over: if case % 5 == 0 { AverageOver::FixedFour } else { AverageOver::ActiveOrders },
        };
        let candidates: Vec<PoolCandidate> = pool
            .iter()
            .enumerate()
            .map(|(i, s)| PoolCandidate { id: ExampleId(i as u64), rank: i + 1, source_tokens: s })
            .collect();
        let got = rerank(&source, &candidates, &cfg).map_err(|e| e.to_string())?;
        let want = rerank_exhaustive(
            &source,
            &pool,
            OracleConfig {
                lambda: cfg.lambda,
                threshold: cfg.threshold,
                q_max: cfg.q_max,
                min_order: cfg.ngram.min_order,
                max_order: cfg.ngram.max_order,
                mode: cfg.matched_count_mode,
                average: cfg.average_over,
            },
        );
        let describe = || format!("case {case}: source {source:?}, pool {pool:?}, {cfg:?}");
        ensure(stop_name(got.stopped_by) == want.stop, describe)?;
        ensure(got.selected.len() == want.picks.len(), describe)?;
        for (g, (idx, score)) in got.selected.iter().zip(&want.picks) {
            ensure(g.id == ExampleId(*idx as u64) && (g.score - score).abs() <= 1e-9, describe)?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{instances} instances in {elapsed:.2?}"))
}

fn poulvac_coverage() -> Check {
    let source = "Welche Risiken sind mit Poulvac FluFend H5N3 RG verbunden ?";
    let datastore: Vec<String> = [
        "Poulvac FluFend H5N3 RG ist ein Impfstoff gegen Poulvac FluFend H5N3 RG .",
        "Wie wird Poulvac FluFend H5N3 RG angewendet ?",
        "Poulvac FluFend H5N3 RG wird Hühnern injiziert .",
        "Warum wurde Poulvac FluFend H5N3 RG zugelassen ?",
        "Welche Risiken sind mit Sebivo verbunden ?",
        "Welche Vorteile hat Sebivo ?",
        "Die Tiere sind mit dem Impfstoff geschützt .",
        "Welche Nebenwirkungen sind bekannt ?",
        "Das Arzneimittel ist mit Risiken verbunden .",
        "Wie wirkt Sebivo ?",
        "Welche Tiere sind betroffen ?",
        "Sind Hühner mit Impfstoff geschützt ?",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    // Everyday sentences make the question words common and the product name rare.
    let mut datastore = datastore;
    for i in 0..32 {
        datastore.push(match i % 4 {
            0 => format!("Welche Packung {i} ist erhältlich ?"),
            1 => format!("Die Risiken {i} sind gering ."),
            2 => format!("Sie sind mit Dosis {i} behandelt worden ."),
            _ => format!("Ist Studie {i} damit verbunden ?"),
        });
    }
    let corpus = sources_corpus(&datastore);
    let index = Bm25Index::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let lookup = ExampleLookup::new(&corpus);
    let src = Tokenizer::default().tokenize(source);
    let retrieved = index.retrieve(&src, 100);
    let pool = pool_from(&retrieved, &lookup).map_err(|e| e.to_string())?;
    // A fresh coverage state scores at most 1, so the lowest grid threshold is used.
    let cfg = RerankConfig { threshold: 0.1, ..RerankConfig::default() };
    let selection = rerank(&src, &pool, &cfg).map_err(|e| e.to_string())?;

    let tokens_of = |id: ExampleId| lookup.get(id).unwrap().source_tokens.as_slice();
    let unigram = NGramConfig::new(1, 1).unwrap();
    let cov = |ids: &[ExampleId]| {
        let sources: Vec<&[String]> = ids.iter().map(|id| tokens_of(*id)).collect();
        coverage_report(&src, &sources, unigram).fraction(1).unwrap_or(0.0)
    };
    let bm25_top2: Vec<ExampleId> = retrieved.iter().take(2).map(|c| c.id).collect();
    let reranked_top2: Vec<ExampleId> = selection.ids().into_iter().take(2).collect();
    let (bm25_cov, reranked_cov) = (cov(&bm25_top2), cov(&reranked_top2));
    ensure(reranked_top2.len() == 2 && reranked_cov == 1.0, || {
        format!("reranked top-2 {reranked_top2:?} cover {reranked_cov}")
    })?;
    ensure(bm25_cov < 1.0, || format!("BM25 top-2 {bm25_top2:?} already cover {bm25_cov}"))?;
    Ok(format!(
        "order-1 coverage: reranked top-2 {reranked_top2:?} {reranked_cov:.3}, BM25 top-2 {bm25_top2:?} {bm25_cov:.3}"
    ))
}

fn lambda_zero_semantics() -> Check {
    let unigram = NGramConfig::new(1, 1).unwrap();
    let cfg = RerankConfig { lambda: 0.0, threshold: 1e-12, ngram: unigram, ..RerankConfig::default() };
    let source = toks("a b c d");
    let pool = [toks("a b c q"), toks("c d z w"), toks("a b x y")];
    let candidates: Vec<PoolCandidate> = pool
        .iter()
        .enumerate()
        .map(|(i, s)| PoolCandidate { id: ExampleId(i as u64), rank: i + 1, source_tokens: s })
        .collect();
    let selection = rerank(&source, &candidates, &cfg).map_err(|e| e.to_string())?;
    ensure(selection.ids() == [ExampleId(0), ExampleId(1)], || format!("selected {:?}", selection.ids()))?;

    let mut state = SourceCoverageState::new(&source, unigram);
    let first = state.project_tokens(&pool[0]);
    state.downweight_projection(&first, 0.0).map_err(|e| e.to_string())?;
    let second = state.project_tokens(&pool[1]);
    let new_grams: Vec<String> = state.matched(&second).into_iter().map(|g| g.join(" ")).collect();
    ensure(new_grams == ["d"], || format!("second pick matched {new_grams:?}"))?;
    let subset = state.score(&NGramMultiset::extract(&pool[2], unigram), cfg.scoring());
    ensure(subset == 0.0, || format!("covered-subset candidate scored {subset}"))?;
    Ok(format!(
        "second pick matched only {new_grams:?}; covered-subset candidate scored {subset}; scores {:?}",
        selection.selected.iter().map(|s| s.score).collect::<Vec<_>>()
    ))
}

/// Groups of near-duplicates: each group shares a 12-word stem and its
/// members differ in one or two positions.
fn near_duplicate_corpus(rng: &mut ChaCha8Rng, groups: usize, per_group: usize) -> Vec<String> {
    let mut out = Vec::new();
    for g in 0..groups {
        let stem: Vec<String> = (0..12).map(|_| format!("v{}", rng.gen_range(0..300))).collect();
        for m in 0..per_group {
            let mut s = stem.clone();
            for _ in 0..rng.gen_range(1..=2) {
                let pos = rng.gen_range(0..s.len());
                s[pos] = format!("g{g}m{m}x{}", rng.gen_range(0..4));
            }
            out.push(s.join(" "));
        }
    }
    out.shuffle(rng);
    out
}

fn threshold_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let datastore = near_duplicate_corpus(&mut rng, 60, 25);
    let corpus = sources_corpus(&datastore);
    let index = Bm25Index::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let lookup = ExampleLookup::new(&corpus);
    let tok = Tokenizer::default();
    // Test sources repeat datastore sentences, as in domains with many duplicates.
    let tests: Vec<Vec<String>> = datastore.iter().step_by(15).map(|s| tok.tokenize(s)).collect();
    let mut averages = Vec::new();
    for threshold in [0.1, 1.0, 5.0] {
        let cfg = RerankConfig { threshold, ..RerankConfig::default() };
        let mut total = 0usize;
        for src in &tests {
            let pool = pool_from(&index.retrieve(src, 100), &lookup).map_err(|e| e.to_string())?;
            total += rerank(src, &pool, &cfg).map_err(|e| e.to_string())?.selected.len();
        }
        averages.push(total as f64 / tests.len() as f64);
    }
    ensure(averages.windows(2).all(|w| w[0] >= w[1]), || format!("averages {averages:?}"))?;
    ensure(averages[0] > averages[2], || format!("thresholds made no difference: {averages:?}"))?;
    Ok(format!(
        "{} queries, average selected at thresholds 0.1/1.0/5.0: {:.2} / {:.2} / {:.2}",
        tests.len(),
        averages[0],
        averages[1],
        averages[2]
    ))
}

fn bm25_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut largest = 0;
    for case in 0..100 {
        let docs = rng.gen_range(1..=1000);
        largest = largest.max(docs);
        let vocab = rng.gen_range(5..200);
        let sources: Vec<String> = (0..docs)
            .map(|_| {
                let len = rng.gen_range(1..=25);
                (0..len).map(|_| format!("t{}", rng.gen_range(0..vocab))).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let corpus = sources_corpus(&sources);
        let params = Bm25Params::default();
        let index = Bm25Index::build(&corpus, params).map_err(|e| e.to_string())?;
        let token_docs: Vec<Vec<String>> = corpus.examples.iter().map(|e| e.source_tokens.clone()).collect();
        for _ in 0..3 {
            let query: Vec<String> = (0..rng.gen_range(1..=12)).map(|_| format!("t{}", rng.gen_range(0..vocab + 5))).collect();
            let want = bm25_exhaustive(&token_docs, &query, params.k1, params.b, 100);
            let got = index.retrieve(&query, 100);
            let describe = || format!("case {case}, query {query:?}");
            ensure(got.len() == want.len(), describe)?;
            for (rank, (g, (i, s))) in got.iter().zip(&want).enumerate() {
                ensure(g.id == ExampleId(*i as u64) && g.rank == rank + 1, describe)?;
                ensure((g.bm25_score - s).abs() <= 1e-9, describe)?;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("100 corpora (up to {largest} docs), 300 queries, top-100, in {elapsed:.2?}"))
}

fn bleu_table() -> Check {
    let mut cases = 0;
    for &(h, r, want, _) in BLEU_PAIRS {
        let got = icmt_core::metrics::corpus_bleu(&[h], &[r]).map_err(|e| e.to_string())?.score;
        ensure((got - want).abs() < 1e-6, || format!("{h:?} vs {r:?}: {got} != {want}"))?;
        cases += 1;
    }
    for &(pairs, want) in BLEU_CORPORA {
        let (hyps, refs): (Vec<&str>, Vec<&str>) = pairs.iter().copied().unzip();
        let got = icmt_core::metrics::corpus_bleu(&hyps, &refs).map_err(|e| e.to_string())?.score;
        ensure((got - want).abs() < 1e-6, || format!("{pairs:?}: {got} != {want}"))?;
        cases += 1;
    }
    let identity = icmt_core::metrics::corpus_bleu(&["x y z w v"], &["x y z w v"]).unwrap().score;
    let disjoint = icmt_core::metrics::corpus_bleu(&["x y z w v"], &["a b c d e"]).unwrap().score;
    ensure(identity == 100.0 && disjoint == 0.0, || format!("identity {identity}, disjoint {disjoint}"))?;
    let headline = icmt_core::metrics::corpus_bleu(&["a b c d"], &["a b c d e"]).unwrap().score;
    Ok(format!("{cases} cases within 1e-6; \"a b c d\" vs \"a b c d e\" = {headline:.4}"))
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_icmt"));
    cmd.env_remove("ICMT_ENDPOINT").env_remove("ICMT_CONCURRENCY");
    cmd
}

fn icmt(dir: &Path, args: &[&str]) -> std::result::Result<String, String> {
    let out = bin().args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("icmt {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn write_pairs(dir: &Path, stem: &str, pairs: &[(String, String)]) {
    write_lines(&dir.join(format!("{stem}.de")), pairs.iter().map(|p| p.0.as_str()));
    write_lines(&dir.join(format!("{stem}.en")), pairs.iter().map(|p| p.1.as_str()));
}

fn toy_pairs(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            (
                format!("satz {i} mit wort{} und wort{} .", i % 7, i % 5),
                format!("sentence {i} with word{} and word{} .", i % 7, i % 5),
            )
        })
        .collect()
}

fn closed_loop() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    write_pairs(p, "data", &toy_pairs(50));
    let data = ["--train-src", "data.de", "--train-tgt", "data.en"];
    let test = ["--test-src", "data.de", "--test-tgt", "data.en"];
    icmt(p, &[&["build-index"][..], &data, &["--out", "idx.jsonl"]].concat())?;
    icmt(p, &[&["retrieve-rerank", "--index", "idx.jsonl", "--q-max", "1"][..], &data, &test[..2], &["--out", "sel.jsonl"]].concat())?;
    let mut scores = Vec::new();
    for backend in ["copy-target", "echo"] {
        let out = format!("{backend}.jsonl");
        let stdout = icmt(
            p,
            &[
                &["translate-eval", "--selection", "sel.jsonl", "--p", "0", "--q", "1", "--backend", backend][..],
                &data,
                &test,
                &["--out", &out],
            ]
            .concat(),
        )?;
        let stats: serde_json::Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
        let bleu = stats["bleu"].as_f64().ok_or_else(|| format!("{backend}: no bleu in {stdout}"))?;
        ensure(stats["n"] == 50, || format!("{backend}: {stdout}"))?;
        scores.push(bleu);
    }
    ensure(scores[0] == 100.0, || format!("copy-target BLEU {}", scores[0]))?;
    ensure(scores[1].is_finite(), || format!("echo BLEU {}", scores[1]))?;
    Ok(format!("50 sentences: copy-target BLEU {:.2}, echo BLEU {:.2}", scores[0], scores[1]))
}

fn task_selection_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["the", "house", "is", "small", "old", "a", "cat", "sat", "on", "mat", "red", "big"];
    let mut sentence = |lo: usize, hi: usize| {
        (0..rng.gen_range(lo..=hi)).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    // Dev sources of at least 6 tokens leave pool targets (at most 12) untruncated.
    let dev: Vec<(String, String)> = (0..12).map(|_| (sentence(6, 10), sentence(4, 12))).collect();
    let mut pool: Vec<(String, String)> = (0..8).map(|i| (format!("quelle {i}"), sentence(3, 12))).collect();
    for i in 8..24 {
        let mut target = toks(&dev[rng.gen_range(0..dev.len())].1);
        let pos = rng.gen_range(0..target.len());
        target[pos] = words.choose(&mut rng).unwrap().to_string();
        pool.push((format!("quelle {i}"), target.join(" ")));
    }
    let dev_corpus = corpus_of(&dev, CorpusRole::Dev);
    let pool_corpus = corpus_of(&pool, CorpusRole::Datastore);
    let ranking = select_task_prompts(&pool_corpus, &dev_corpus, &CopyTargetBackend::default(), &TaskSelectionConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(ranking.complete, || "ranking incomplete".into())?;

    let refs: Vec<Vec<String>> = dev.iter().map(|(_, t)| toks(t)).collect();
    let mut direct: Vec<(ExampleId, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, (_, t))| (ExampleId(i as u64), bleu_exhaustive(&vec![toks(t); refs.len()], &refs)))
        .collect();
    direct.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let got: Vec<ExampleId> = ranking.ranked.iter().map(|s| s.id).collect();
    let want: Vec<ExampleId> = direct.iter().map(|d| d.0).collect();
    ensure(got == want, || format!("ranking {got:?} != direct {want:?}"))?;
    for (s, (_, d)) in ranking.ranked.iter().zip(&direct) {
        ensure((s.dev_bleu - d).abs() <= 1e-9, || format!("{} vs {d}", s.dev_bleu))?;
    }
    Ok(format!(
        "pool {} x dev {}: ranking matches direct BLEU order; best {:?} at {:.2}",
        pool.len(),
        dev.len(),
        want[0],
        direct[0].1
    ))
}

/// Every file whose name starts with `prefix`, by name.
fn snapshot(dir: &Path, prefix: &str) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with(prefix).then(|| (name, fs::read(e.path()).unwrap()))
        })
        .collect()
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let mut all = toy_pairs(40);
    all.extend(
        ["das haus ist klein .", "der impfstoff ist sicher .", "welche risiken sind bekannt ?"]
            .iter()
            .zip(["the house is small .", "the vaccine is safe .", "which risks are known ?"])
            .map(|(s, t)| (s.to_string(), t.to_string())),
    );
    write_pairs(p, "train", &all);
    let test: Vec<(String, String)> = toy_pairs(53).into_iter().skip(35).collect();
    write_pairs(p, "test", &test);
    let train = ["--train-src", "train.de", "--train-tgt", "train.en"];
    let test = ["--test-src", "test.de", "--test-tgt", "test.en"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("idx", [&["build-index"][..], &train, &["--out", "idx.jsonl"]].concat()),
        ("sel", [&["retrieve-rerank", "--index", "idx.jsonl"][..], &train, &test[..2], &["--out", "sel.jsonl"]].concat()),
        (
            "rank",
            [
                &["select-task-prompt", "--dev-src", "test.de", "--dev-tgt", "test.en", "--pool-size", "8", "--seed", "11"][..],
                &train,
                &["--backend", "copy-target", "--out", "rank.jsonl"],
            ]
            .concat(),
        ),
        (
            "eval",
            [
                &["translate-eval", "--selection", "sel.jsonl", "--ranking", "rank.jsonl", "--p", "1", "--q", "4"][..],
                &train,
                &test,
                &["--backend", "echo", "--out", "eval.jsonl"],
            ]
            .concat(),
        ),
        (
            "abl",
            [
                &["ablate-datastore", "--sizes", "25%,50%,100%", "--q-grid", "1,4", "--seed", "5"][..],
                &train,
                &test,
                &["--backend", "echo", "--out", "abl.jsonl"],
            ]
            .concat(),
        ),
    ];
    let mut checked = Vec::new();
    for (prefix, args) in &commands {
        let stdout_a = icmt(p, args)?;
        let first = snapshot(p, prefix);
        let stdout_b = icmt(p, args)?;
        let second = snapshot(p, prefix);
        let config = format!("{prefix}.jsonl.config.json");
        let stdout_c = icmt(p, &["rerun", &config])?;
        let third = snapshot(p, prefix);
        ensure(first.len() >= 2 && first == second && second == third, || {
            format!("{}: outputs differ between runs", args[0])
        })?;
        ensure(stdout_a == stdout_b && stdout_b == stdout_c, || format!("{}: stdout differs", args[0]))?;
        checked.push(format!("{} ({} files)", args[0], first.len()));
    }
    Ok(format!("identical across flag rerun and config rerun: {}", checked.join(", ")))
}

fn scale_sanity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let spec = SyntheticSpec { examples: 250_000, seed: 10, ..SyntheticSpec::default() };
    let corpus = icmt_bench::corpus(&spec, CorpusRole::Datastore);
    write_lines(&p.join("train.de"), corpus.examples.iter().map(|e| e.source.as_str()));
    write_lines(&p.join("train.en"), corpus.examples.iter().map(|e| e.target.as_str()));
    let queries: Vec<String> = icmt_bench::queries(&spec, 2000, 11).iter().map(|q| q.join(" ")).collect();
    write_lines(&p.join("test.de"), queries.iter().map(String::as_str));
    drop(corpus);

    let start = Instant::now();
    icmt(p, &["build-index", "--train-src", "train.de", "--train-tgt", "train.en", "--out", "idx.jsonl"])?;
    let built = start.elapsed();
    icmt(
        p,
        &[
            "retrieve-rerank", "--index", "idx.jsonl", "--train-src", "train.de", "--train-tgt", "train.en",
            "--test-src", "test.de", "--out", "sel.jsonl",
        ],
    )?;
    let elapsed = start.elapsed();
    let lines = fs::read_to_string(p.join("sel.jsonl")).map_err(|e| e.to_string())?.lines().count();
    ensure(lines == 2000, || format!("{lines} selection records"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "250000 pairs, 2000 sources on {} threads: build-index {built:.1?}, total {elapsed:.1?}",
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("rerank matches brute-force reference", rerank_oracle_equivalence),
        ("reranked top-2 cover the Poulvac source, BM25 top-2 do not", poulvac_coverage),
        ("lambda = 0 only rewards unseen n-grams", lambda_zero_semantics),
        ("selected count non-increasing over thresholds", threshold_monotonicity),
        ("BM25 index matches exhaustive scorer", bm25_oracle_equivalence),
        ("BLEU table", bleu_table),
        ("closed loop with mock backends", closed_loop),
        ("task-level selection matches direct BLEU ranking", task_selection_oracle),
        ("CLI reruns are byte-identical", reproducibility),
        ("250K-pair build-index + retrieve-rerank under 10 minutes", scale_sanity),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = HashSet::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.insert(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
