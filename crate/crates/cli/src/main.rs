//! `tkg-rag`: rule mining, history retrieval, prompt building, fine-tune
//! export, inference and evaluation over temporal knowledge graphs.
//!
//! Exit status: 0 success, 1 invalid config or input, 2 runtime failure,
//! 3 completion endpoint unreachable.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use config::{Override, PredictorKind, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "tkg-rag", version, about = "Temporal knowledge graph rule mining, retrieval and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine length-1 temporal rules from the training split.
    Mine {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
    },
    /// Retrieve rule-guided histories for a split's queries.
    Retrieve {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Render prompts for a split's queries.
    Prompt {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Write K instruction samples from the training split as JSON lines.
    Export {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        /// Number of samples.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Predict objects for a split's queries.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        queries: QueryArgs,
        #[command(flatten)]
        predict: PredictArgs,
    },
    /// Time-aware filtered Hits@1/3/10 over a split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        queries: QueryArgs,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate every combination of prompt format, fact order and history length.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        queries: QueryArgs,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Fact orders to compare.
        #[arg(long, value_delimiter = ',')]
        orders: Vec<OrderArg>,
        /// History lengths to compare.
        #[arg(long, value_delimiter = ',')]
        histories: Vec<usize>,
        /// Prompt formats to compare.
        #[arg(long, value_delimiter = ',')]
        formats: Vec<FormatArg>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic`, `synthetic-events`, icews14, icews18, gdelt, yago, or a directory.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding the benchmark presets.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Raw timestamp unit of a dataset directory.
    #[arg(long)]
    time_gap: Option<u64>,
    /// How dataset columns are read.
    #[arg(long, value_enum)]
    id_format: Option<IdFormatArg>,
    /// Do not add inverse edges.
    #[arg(long)]
    no_inverse: bool,
    /// Load this rule bank instead of mining one.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Single seed (shorthand for `--seeds N`).
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Replicate the run once per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Any config field, e.g. `--set retrieval.window=30`.
    #[arg(long = "set", value_name = "PATH=VALUE", value_parser = Override::parse)]
    set: Vec<Override>,
}

#[derive(Args)]
struct MiningArgs {
    /// Random walks per head relation.
    #[arg(long)]
    walks: Option<usize>,
    /// Minimum body support of a kept rule.
    #[arg(long)]
    min_support: Option<u64>,
    /// Body groundings enumerated before sampling.
    #[arg(long)]
    grounding_cap: Option<u64>,
}

#[derive(Args)]
struct RetrievalArgs {
    /// Time window length; whole past when absent.
    #[arg(long)]
    window: Option<u32>,
    /// Rule bodies used per query.
    #[arg(long)]
    top_k: Option<usize>,
    /// Maximum retrieved facts.
    #[arg(long)]
    history: Option<usize>,
    /// Exhaust each window before stepping further back.
    #[arg(long)]
    stepwise: bool,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// Facts shown per prompt.
    #[arg(long)]
    max_facts: Option<usize>,
    /// Character budget per prompt; 0 disables it.
    #[arg(long)]
    char_budget: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    /// Split whose edges become queries.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Use only the first N queries.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_enum)]
    predictor: Option<PredictorKind>,
    /// Completion endpoint URL (default: $TKG_RAG_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    #[arg(long)]
    num_sequences: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Retries after the first attempt.
    #[arg(long)]
    retries: Option<u32>,
    /// Concurrent requests.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Queries per prediction batch.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Facts considered when filtering co-true objects.
    #[arg(long, value_enum)]
    filter: Option<FilterArg>,
    /// Do not persist or resume from a journal.
    #[arg(long)]
    no_journal: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdFormatArg {
    Auto,
    Ids,
    Names,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Index,
    Lexical,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Ascending,
    Descending,
    Random,
    TimestampsRemoved,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    AllSplits,
    TestOnly,
}

fn name_of<T: ValueEnum>(v: T) -> Value {
    Value::String(v.to_possible_value().expect("no skipped variants").get_name().to_owned())
}

fn order_value(o: OrderArg) -> Value {
    match o {
        OrderArg::Random => json!({ "kind": "random", "seed": 0 }),
        other => json!({ "kind": name_of(other) }),
    }
}

/// Collects `(path, value)` assignments from whichever flags were given.
#[derive(Default)]
struct Overrides(Vec<Override>);

impl Overrides {
    fn put(&mut self, path: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.0.push(Override::new(path, v));
        }
    }

    fn flag(&mut self, path: &str, set: bool, value: bool) {
        if set {
            self.0.push(Override::new(path, value));
        }
    }

    fn common(&mut self, a: &CommonArgs) {
        self.put("dataset.name", a.dataset.clone());
        self.put("dataset.data_dir", a.data_dir.as_ref().map(|p| p.display().to_string()));
        self.put("dataset.time_gap", a.time_gap);
        self.put("dataset.format", a.id_format.map(name_of));
        self.flag("dataset.inverse", a.no_inverse, false);
        self.flag("dataset.planted.inverse", a.no_inverse, false);
        self.put("rules", a.rules.as_ref().map(|p| p.display().to_string()));
        let seeds: Vec<u64> = a.seed.map(|s| vec![s]).unwrap_or_else(|| a.seeds.clone());
        if !seeds.is_empty() {
            self.0.push(Override::new("seeds", seeds));
        }
        self.put("output", a.out.as_ref().map(|p| p.display().to_string()));
        self.put("threads", a.threads);
    }

    fn mining(&mut self, a: &MiningArgs) {
        self.put("mining.num_walks", a.walks);
        self.put("mining.min_body_support", a.min_support);
        self.put("mining.grounding_cap", a.grounding_cap);
    }

    fn retrieval(&mut self, a: &RetrievalArgs) {
        self.put("retrieval.window", a.window);
        self.put("retrieval.top_k", a.top_k);
        self.put("retrieval.max_history", a.history);
        self.flag("retrieval.stepwise", a.stepwise, true);
    }

    fn prompt(&mut self, a: &PromptArgs) {
        self.put("prompt.format", a.format.map(name_of));
        self.put("prompt.order", a.order.map(order_value));
        self.put("prompt.max_facts", a.max_facts);
        self.put("prompt.char_budget", a.char_budget.map(|b| if b == 0 { Value::Null } else { b.into() }));
    }

    fn queries(&mut self, a: &QueryArgs) {
        self.put("queries.split", a.split.map(name_of));
        self.put("queries.limit", a.limit);
    }

    fn predict(&mut self, a: &PredictArgs) {
        self.put("predictor", a.predictor.map(name_of));
        self.put("endpoint", a.endpoint.clone());
        self.put("generation.max_new_tokens", a.max_new_tokens);
        self.put("generation.num_sequences", a.num_sequences);
        self.put("generation.temperature", a.temperature);
        self.put("generation.timeout_ms", a.timeout_ms);
        self.put("generation.max_retries", a.retries);
        self.put("generation.max_in_flight", a.max_in_flight);
        self.put("eval.batch_size", a.batch_size);
    }

    fn eval(&mut self, a: &EvalArgs) {
        self.put("eval.filter", a.filter.map(name_of));
        self.flag("eval.journal", a.no_journal, false);
    }

    /// `--set` assignments go last so they win over named flags.
    fn finish(mut self, a: &CommonArgs) -> Vec<Override> {
        self.common(a);
        self.0.extend(a.set.iter().cloned());
        self.0
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut o = Overrides::default();
    let (name, common) = match &cli.command {
        Command::Mine { common, mining } => {
            o.mining(mining);
            ("mine", common)
        }
        Command::Retrieve { common, mining, retrieval, queries } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.queries(queries);
            ("retrieve", common)
        }
        Command::Prompt { common, mining, retrieval, prompt, queries } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.prompt(prompt);
            o.queries(queries);
            ("prompt", common)
        }
        Command::Export { common, mining, retrieval, prompt, k } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.prompt(prompt);
            o.put("export.k", *k);
            ("export", common)
        }
        Command::Infer { common, mining, retrieval, prompt, queries, predict } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.prompt(prompt);
            o.queries(queries);
            o.predict(predict);
            ("infer", common)
        }
        Command::Eval { common, mining, retrieval, prompt, queries, predict, eval } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.prompt(prompt);
            o.queries(queries);
            o.predict(predict);
            o.eval(eval);
            ("eval", common)
        }
        Command::Ablate { common, mining, retrieval, queries, predict, eval, orders, histories, formats } => {
            o.mining(mining);
            o.retrieval(retrieval);
            o.queries(queries);
            o.predict(predict);
            o.eval(eval);
            if !orders.is_empty() {
                o.0.push(Override::new("ablation.orders", orders.iter().map(|&x| order_value(x)).collect::<Vec<_>>()));
            }
            if !histories.is_empty() {
                o.0.push(Override::new("ablation.history_lengths", histories.clone()));
            }
            if !formats.is_empty() {
                o.0.push(Override::new("ablation.formats", formats.iter().map(|&x| name_of(x)).collect::<Vec<_>>()));
            }
            ("ablate", common)
        }
    };
    let overrides = o.finish(common);
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    if cfg.predictor == PredictorKind::Llm && cfg.endpoint.is_none() {
        cfg.endpoint = std::env::var(tkg_rag::llm::ENDPOINT_ENV).ok();
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    commands::run(name, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
