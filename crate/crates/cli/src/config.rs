//! Resolved run configuration. Every command writes one of these as
//! `<out>.config.json`, and `icmt rerun` executes it again.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use icmt_core::backend::{
    Backend, CopyTargetBackend, EchoBackend, EndpointConfig, HttpBackend, LexiconBackend, LimitedBackend,
};
use icmt_core::{
    Bm25Params, Corpus, CorpusRole, Error, FilterConfig, PromptPlan, PromptTemplate, RerankConfig, Result, Tokenizer,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub command: CommandConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandConfig {
    BuildIndex(BuildIndexConfig),
    RetrieveRerank(RetrieveRerankConfig),
    SelectTaskPrompt(SelectTaskPromptConfig),
    TranslateEval(TranslateEvalConfig),
    AblateDatastore(AblateDatastoreConfig),
}

impl CommandConfig {
    pub fn out(&self) -> &Path {
        match self {
            CommandConfig::BuildIndex(c) => &c.out,
            CommandConfig::RetrieveRerank(c) => &c.out,
            CommandConfig::SelectTaskPrompt(c) => &c.out,
            CommandConfig::TranslateEval(c) => &c.out,
            CommandConfig::AblateDatastore(c) => &c.out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildIndexConfig {
    pub train: CorpusFiles,
    pub preprocessing: Preprocessing,
    pub bm25: Bm25Params,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRerankConfig {
    pub index: PathBuf,
    pub train: CorpusFiles,
    pub test: CorpusFiles,
    pub preprocessing: Preprocessing,
    pub pool_size: usize,
    pub rerank: RerankConfig,
    /// Words left out of BM25 queries. Coverage scoring still sees them.
    pub stopwords: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectTaskPromptConfig {
    pub train: CorpusFiles,
    pub dev: CorpusFiles,
    pub preprocessing: Preprocessing,
    pub pool_size: usize,
    pub dev_subsample: Option<usize>,
    pub template: PromptTemplate,
    pub backend: BackendConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateEvalConfig {
    pub train: CorpusFiles,
    pub test: CorpusFiles,
    pub preprocessing: Preprocessing,
    /// Selection dump from `retrieve-rerank`; required when `plan.q_max > 0`.
    pub selection: Option<PathBuf>,
    /// Ranking from `select-task-prompt`; required when `plan.p > 0`.
    pub ranking: Option<PathBuf>,
    pub plan: PromptPlan,
    pub template: PromptTemplate,
    pub backend: BackendConfig,
    /// Label copied into the stats record.
    pub name: String,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateDatastoreConfig {
    pub train: CorpusFiles,
    pub test: CorpusFiles,
    pub preprocessing: Preprocessing,
    /// Datastore sizes as counts ("5000") or percentages ("25%").
    pub sizes: Vec<String>,
    pub q_grid: Vec<usize>,
    pub bm25: Bm25Params,
    pub pool_size: usize,
    pub rerank: RerankConfig,
    pub template: PromptTemplate,
    pub token_budget: usize,
    pub backend: BackendConfig,
    pub out: PathBuf,
}

/// A corpus on disk: either a JSONL file of `{id?, source, target}` records or
/// line-aligned text files. The target file may be omitted for test sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusFiles {
    Jsonl { jsonl: PathBuf },
    Parallel { source: PathBuf, target: Option<PathBuf> },
}

impl CorpusFiles {
    pub fn from_flags(source: Option<PathBuf>, target: Option<PathBuf>, jsonl: Option<PathBuf>) -> Option<Self> {
        match (jsonl, source) {
            (Some(jsonl), _) => Some(CorpusFiles::Jsonl { jsonl }),
            (None, Some(source)) => Some(CorpusFiles::Parallel { source, target }),
            (None, None) => None,
        }
    }

    pub fn has_targets(&self) -> bool {
        !matches!(self, CorpusFiles::Parallel { target: None, .. })
    }

    fn load(&self, role: CorpusRole, tokenizer: &Tokenizer) -> Result<Corpus> {
        match self {
            CorpusFiles::Jsonl { jsonl } => Corpus::load_jsonl(jsonl, role, tokenizer),
            CorpusFiles::Parallel { source, target: Some(target) } => {
                Corpus::load_parallel(source, target, role, tokenizer)
            }
            CorpusFiles::Parallel { source, target: None } => Corpus::load_sources(source, role, tokenizer),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub lowercase: bool,
    /// Applied to the datastore only; dev and test sets are normalized but
    /// never dropped from.
    pub filter: FilterConfig,
    pub dedup: bool,
}

impl Preprocessing {
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.lowercase)
    }

    pub fn datastore(&self, files: &CorpusFiles) -> Result<Corpus> {
        self.filter.validate()?;
        let tok = self.tokenizer();
        let corpus = files.load(CorpusRole::Datastore, &tok)?.normalize_and_filter(&self.filter, &tok);
        Ok(if self.dedup { corpus.dedup() } else { corpus })
    }

    pub fn eval_set(&self, files: &CorpusFiles, role: CorpusRole) -> Result<Corpus> {
        let tok = self.tokenizer();
        let corpus = files.load(role, &tok)?;
        Ok(if self.filter.normalize_punctuation {
            corpus.normalized(&tok)
        } else {
            corpus
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Echo,
    CopyTarget,
    Lexicon,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<EndpointConfig>,
    /// Tab-separated `source<TAB>target` word pairs for the lexicon backend.
    pub lexicon: Option<PathBuf>,
    pub retries: usize,
    pub concurrency: usize,
}

impl BackendConfig {
    pub fn mock(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint: None,
            lexicon: None,
            retries: 2,
            concurrency: 4,
        }
    }

    pub fn build(&self, template: &PromptTemplate) -> Result<LimitedBackend<Box<dyn Backend>>> {
        let inner: Box<dyn Backend> = match self.kind {
            BackendKind::Echo => Box::new(EchoBackend::new(template.clone())),
            BackendKind::CopyTarget => Box::new(CopyTargetBackend::new(template.clone())),
            BackendKind::Lexicon => {
                let path = self
                    .lexicon
                    .as_ref()
                    .ok_or_else(|| Error::Config("the lexicon backend needs a lexicon file".into()))?;
                Box::new(LexiconBackend::new(template.clone(), read_lexicon(path)?))
            }
            BackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("the http backend needs an endpoint".into()))?;
                Box::new(HttpBackend::new(endpoint)?)
            }
        };
        Ok(LimitedBackend::new(inner, self.concurrency))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_lexicon(path: &Path) -> Result<std::collections::HashMap<String, String>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split_once('\t')
                .map(|(s, t)| (s.trim().to_string(), t.trim().to_string()))
                .ok_or_else(|| Error::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected source<TAB>target".into(),
                })
        })
        .collect()
}

pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    Ok(read_text(path)?.split_whitespace().map(str::to_string).collect())
}

/// Resolves "25%" or "5000" against a corpus of `total` examples.
pub fn resolve_size(spec: &str, total: usize) -> Result<usize> {
    let bad = || Error::Config(format!("bad datastore size {spec:?}"));
    let n = match spec.strip_suffix('%') {
        Some(pct) => {
            let pct: f64 = pct.trim().parse().map_err(|_| bad())?;
            if !(pct > 0.0 && pct <= 100.0) {
                return Err(bad());
            }
            ((pct / 100.0) * total as f64).round() as usize
        }
        None => spec.trim().parse().map_err(|_| bad())?,
    };
    if n == 0 || n > total {
        return Err(Error::Contract(format!(
            "datastore size {spec} resolves to {n} of {total} examples"
        )));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(resolve_size("25%", 1000).unwrap(), 250);
        assert_eq!(resolve_size("100%", 7).unwrap(), 7);
        assert_eq!(resolve_size("3", 7).unwrap(), 3);
        assert!(resolve_size("0%", 7).is_err());
        assert!(resolve_size("8", 7).is_err());
        assert!(resolve_size("lots", 7).is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig {
            seed: 3,
            command: CommandConfig::RetrieveRerank(RetrieveRerankConfig {
                index: "idx".into(),
                train: CorpusFiles::Parallel {
                    source: "a.de".into(),
                    target: Some("a.en".into()),
                },
                test: CorpusFiles::Parallel {
                    source: "t.de".into(),
                    target: None,
                },
                preprocessing: Preprocessing::default(),
                pool_size: 100,
                rerank: RerankConfig::default(),
                stopwords: None,
                out: "sel.jsonl".into(),
            }),
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""command":"retrieve-rerank""#));
        assert!(json.contains(r#""lambda":0.1"#) && json.contains(r#""threshold":1.0"#) && json.contains(r#""q_max":16"#));
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }
}
