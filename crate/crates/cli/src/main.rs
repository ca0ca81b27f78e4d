use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icmt_cli::config::*;
use icmt_core::backend::EndpointConfig;
use icmt_core::{
    AverageOver, Bm25Params, FilterConfig, MatchedCountMode, NGramConfig, OrderPolicy, PromptPlan, PromptTemplate,
    RerankConfig,
};

/// Retrieve, re-rank and evaluate in-context examples for MT prompting.
///
/// Every command writes its resolved configuration to `<out>.config.json`;
/// `icmt rerun <file>` executes such a file again.
#[derive(Parser)]
#[command(name = "icmt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index over the source side of a training corpus.
    BuildIndex {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        bm25: Bm25Args,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// BM25 top-k retrieval plus n-gram recall re-ranking for each test source.
    RetrieveRerank {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        rerank: RerankArgs,
        /// Whitespace-separated words to leave out of BM25 queries.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Selection dump (JSONL) to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank a random pool of training examples as one-shot prompts by dev BLEU.
    SelectTaskPrompt {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        dev: DevArgs,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(long, default_value_t = 100)]
        pool_size: usize,
        /// Use only the first N dev pairs.
        #[arg(long)]
        dev_subsample: Option<usize>,
        #[command(flatten)]
        template: TemplateArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble prompts, generate translations and score them.
    TranslateEval {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        prep: PrepArgs,
        /// Selection dump from retrieve-rerank.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Ranking from select-task-prompt.
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        template: TemplateArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Label for the stats record.
        #[arg(long, default_value = "run")]
        name: String,
        /// Per-sentence outputs (JSONL); stats go to `<out>.stats.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU and coverage for nested datastore subsamples and several q values.
    AblateDatastore {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        prep: PrepArgs,
        /// Datastore sizes, as counts or percentages.
        #[arg(long, value_delimiter = ',', default_value = "25%,50%,100%")]
        sizes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,16")]
        q_grid: Vec<usize>,
        #[command(flatten)]
        bm25: Bm25Args,
        #[command(flatten)]
        rerank: RerankArgs,
        #[command(flatten)]
        template: TemplateArgs,
        #[arg(long, default_value_t = 3096)]
        token_budget: usize,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a resolved `<out>.config.json` again.
    Rerun { config: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    /// Training source sentences, one per line.
    #[arg(long, required_unless_present = "train_jsonl")]
    train_src: Option<PathBuf>,
    #[arg(long, requires = "train_src")]
    train_tgt: Option<PathBuf>,
    /// Training pairs as JSONL `{id?, source, target}`.
    #[arg(long, conflicts_with = "train_src")]
    train_jsonl: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, required_unless_present = "test_jsonl")]
    test_src: Option<PathBuf>,
    #[arg(long, requires = "test_src")]
    test_tgt: Option<PathBuf>,
    #[arg(long, conflicts_with = "test_src")]
    test_jsonl: Option<PathBuf>,
}

#[derive(Args)]
struct DevArgs {
    #[arg(long, required_unless_present = "dev_jsonl")]
    dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    dev_tgt: Option<PathBuf>,
    #[arg(long, conflicts_with = "dev_src")]
    dev_jsonl: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    lowercase: bool,
    /// Drop training pairs with either side longer than this.
    #[arg(long, default_value_t = 250)]
    max_tokens: usize,
    /// Drop training pairs whose longer/shorter token ratio exceeds this.
    #[arg(long, default_value_t = 1.5)]
    max_length_ratio: f64,
    #[arg(long)]
    no_normalize_punctuation: bool,
    /// Drop exact duplicate training pairs.
    #[arg(long)]
    dedup: bool,
}

impl From<PrepArgs> for Preprocessing {
    fn from(a: PrepArgs) -> Self {
        Preprocessing {
            lowercase: a.lowercase,
            filter: FilterConfig {
                max_tokens: a.max_tokens,
                max_length_ratio: a.max_length_ratio,
                normalize_punctuation: !a.no_normalize_punctuation,
            },
            dedup: a.dedup,
        }
    }
}

#[derive(Args)]
struct Bm25Args {
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchedArg {
    Original,
    Current,
}

#[derive(Clone, Copy, ValueEnum)]
enum AverageArg {
    ActiveOrders,
    FixedFour,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 16)]
    q_max: usize,
    #[arg(long, default_value_t = 1)]
    min_order: usize,
    #[arg(long, default_value_t = 4)]
    max_order: usize,
    #[arg(long, value_enum, default_value = "original")]
    matched_count: MatchedArg,
    #[arg(long, value_enum, default_value = "active-orders")]
    average_over: AverageArg,
    /// BM25 candidates passed to the re-ranker.
    #[arg(long, default_value_t = 100)]
    pool_size: usize,
}

impl RerankArgs {
    fn config(&self) -> anyhow::Result<RerankConfig> {
        Ok(RerankConfig {
            lambda: self.lambda,
            threshold: self.threshold,
            q_max: self.q_max,
            ngram: NGramConfig::new(self.min_order, self.max_order)?,
            matched_count_mode: match self.matched_count {
                MatchedArg::Original => MatchedCountMode::Original,
                MatchedArg::Current => MatchedCountMode::Current,
            },
            average_over: match self.average_over {
                AverageArg::ActiveOrders => AverageOver::ActiveOrders,
                AverageArg::FixedFour => AverageOver::FixedFour,
            },
        })
    }
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long, default_value = "{source} = {target}")]
    template: String,
    /// Text between examples; `\n` is read as a newline.
    #[arg(long, default_value = "\\n")]
    separator: String,
}

impl TemplateArgs {
    fn template(&self) -> icmt_core::Result<PromptTemplate> {
        PromptTemplate::new(self.template.clone(), self.separator.replace("\\n", "\n"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    MostSimilarLeft,
    MostSimilarRight,
}

#[derive(Args)]
struct PlanArgs {
    /// Task-level examples taken from the top of the ranking.
    #[arg(long, default_value_t = 0)]
    p: usize,
    /// Retrieved examples taken from the front of each selection.
    #[arg(long = "q", default_value_t = 16)]
    q_max: usize,
    #[arg(long, value_enum, default_value = "most-similar-left")]
    order: OrderArg,
    #[arg(long, default_value_t = 3096)]
    token_budget: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Echo,
    CopyTarget,
    Lexicon,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "echo")]
    backend: BackendArg,
    #[arg(long, env = "ICMT_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    /// `source<TAB>target` word list for the lexicon backend.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    /// Maximum concurrent backend requests.
    #[arg(long, env = "ICMT_CONCURRENCY", default_value_t = 4)]
    concurrency: usize,
}

impl From<BackendArgs> for BackendConfig {
    fn from(a: BackendArgs) -> Self {
        BackendConfig {
            kind: match a.backend {
                BackendArg::Echo => BackendKind::Echo,
                BackendArg::CopyTarget => BackendKind::CopyTarget,
                BackendArg::Lexicon => BackendKind::Lexicon,
                BackendArg::Http => BackendKind::Http,
            },
            endpoint: a.endpoint.map(|url| EndpointConfig {
                url,
                timeout: Duration::from_secs_f64(a.timeout_secs),
            }),
            lexicon: a.lexicon,
            retries: a.retries,
            concurrency: a.concurrency,
        }
    }
}

fn files(src: Option<PathBuf>, tgt: Option<PathBuf>, jsonl: Option<PathBuf>) -> CorpusFiles {
    CorpusFiles::from_flags(src, tgt, jsonl).expect("clap enforces one corpus input")
}

fn resolve(command: Command) -> anyhow::Result<RunConfig> {
    let (seed, command) = match command {
        Command::BuildIndex { train, prep, bm25, out } => (
            0,
            CommandConfig::BuildIndex(BuildIndexConfig {
                train: files(train.train_src, train.train_tgt, train.train_jsonl),
                preprocessing: prep.into(),
                bm25: Bm25Params { k1: bm25.k1, b: bm25.b },
                out,
            }),
        ),
        Command::RetrieveRerank {
            index,
            train,
            test,
            prep,
            rerank,
            stopwords,
            out,
        } => (
            0,
            CommandConfig::RetrieveRerank(RetrieveRerankConfig {
                index,
                train: files(train.train_src, train.train_tgt, train.train_jsonl),
                test: files(test.test_src, test.test_tgt, test.test_jsonl),
                preprocessing: prep.into(),
                pool_size: rerank.pool_size,
                rerank: rerank.config()?,
                stopwords,
                out,
            }),
        ),
        Command::SelectTaskPrompt {
            train,
            dev,
            prep,
            pool_size,
            dev_subsample,
            template,
            backend,
            seed,
            out,
        } => (
            seed,
            CommandConfig::SelectTaskPrompt(SelectTaskPromptConfig {
                train: files(train.train_src, train.train_tgt, train.train_jsonl),
                dev: files(dev.dev_src, dev.dev_tgt, dev.dev_jsonl),
                preprocessing: prep.into(),
                pool_size,
                dev_subsample,
                template: template.template()?,
                backend: backend.into(),
                out,
            }),
        ),
        Command::TranslateEval {
            train,
            test,
            prep,
            selection,
            ranking,
            plan,
            template,
            backend,
            name,
            out,
        } => (
            0,
            CommandConfig::TranslateEval(TranslateEvalConfig {
                train: files(train.train_src, train.train_tgt, train.train_jsonl),
                test: files(test.test_src, test.test_tgt, test.test_jsonl),
                preprocessing: prep.into(),
                selection,
                ranking,
                plan: PromptPlan {
                    p: plan.p,
                    q_max: plan.q_max,
                    order_policy: match plan.order {
                        OrderArg::MostSimilarLeft => OrderPolicy::MostSimilarLeft,
                        OrderArg::MostSimilarRight => OrderPolicy::MostSimilarRight,
                    },
                    token_budget: plan.token_budget,
                },
                template: template.template()?,
                backend: backend.into(),
                name,
                out,
            }),
        ),
        Command::AblateDatastore {
            train,
            test,
            prep,
            sizes,
            q_grid,
            bm25,
            rerank,
            template,
            token_budget,
            backend,
            seed,
            out,
        } => (
            seed,
            CommandConfig::AblateDatastore(AblateDatastoreConfig {
                train: files(train.train_src, train.train_tgt, train.train_jsonl),
                test: files(test.test_src, test.test_tgt, test.test_jsonl),
                preprocessing: prep.into(),
                sizes,
                q_grid,
                bm25: Bm25Params { k1: bm25.k1, b: bm25.b },
                pool_size: rerank.pool_size,
                rerank: rerank.config()?,
                template: template.template()?,
                token_budget,
                backend: backend.into(),
                out,
            }),
        ),
        Command::Rerun { config } => return icmt_cli::load_config(&config),
    };
    Ok(RunConfig { seed, command })
}

/// The error chain joined with ": ", skipping causes whose text the previous
/// message already includes.
fn message(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match resolve(cli.command).and_then(|cfg| icmt_cli::run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(icmt_cli::exit_code(&e))
        }
    }
}
