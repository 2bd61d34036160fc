//! One function per subcommand. Each writes its artifacts, a `config.json`
//! that reproduces the run, and a `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use tkg_rag::eval::{
    ablation_run, ablation_summary, aggregate_seeds, build_prompts, run_eval, split_queries, AblationCell, EvalConfig,
    EvalReport, RetrievalCache,
};
use tkg_rag::kg::{Benchmark, DatasetSpec};
use tkg_rag::llm::{BlockingClient, LlmClient, LlmPredictor, PredictRequest, Predictor, RuleScorePredictor};
use tkg_rag::prompt::{export_finetune_set, manifest_path, PromptError};
use tkg_rag::retrieve::{retrieve_batch, write_jsonl};
use tkg_rag::synthetic;
use tkg_rag::{learn_rules, load_dataset, Dataset, Query, RuleBank, Split};

use crate::config::{PredictorKind, RunConfig};
use crate::error::CliError;

pub fn run(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let fingerprint = cfg.fingerprint(command);
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{fingerprint}")));
    let ds = load(cfg)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), pretty(&cfg.canonical()))?;

    let replicas = cfg.replicas();
    let many = replicas.len() > 1;
    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    for (seed, rcfg) in &replicas {
        let name = |stem: &str, ext: &str| match (many, seed) {
            (true, Some(s)) => format!("{stem}-seed{s}.{ext}"),
            _ => format!("{stem}.{ext}"),
        };
        let mut out = Outputs { dir: &dir, written: &mut artifacts };
        match command {
            "mine" => mine(rcfg, &ds, out.file(&name("rules", "json")))?,
            "retrieve" => {
                let bank = bank(rcfg, &ds)?;
                retrieve(rcfg, &ds, &bank, out.file(&name("histories", "jsonl")))?
            }
            "prompt" => {
                let bank = bank(rcfg, &ds)?;
                prompt(rcfg, &ds, &bank, out.file(&name("prompts", "jsonl")))?
            }
            "export" => {
                let bank = bank(rcfg, &ds)?;
                let file = out.file(&name("finetune", "jsonl"));
                export(rcfg, &ds, &bank, &file)?;
                out.written.push(file_name(&manifest_path(&file)));
            }
            "infer" => {
                let bank = bank(rcfg, &ds)?;
                infer(rcfg, &ds, &bank, out.file(&name("predictions", "jsonl")))?
            }
            "eval" => {
                let bank = bank(rcfg, &ds)?;
                let journal = rcfg.eval.journal.then(|| out.file(&name("journal", "jsonl")));
                let report = eval(rcfg, &ds, &bank, journal.as_deref(), out.file(&name("report", "json")))?;
                println!("{}", hits_line(seed, &report));
                reports.push(report);
            }
            "ablate" => {
                let bank = bank(rcfg, &ds)?;
                let tsv = out.file(&name("ablation", "tsv"));
                let cells = ablate(rcfg, &ds, &bank, &tsv)?;
                fs::write(out.file(&name("ablation", "json")), pretty(&cells))?;
            }
            other => unreachable!("unknown command {other}"),
        }
    }
    if many && command == "eval" {
        let summary = aggregate_seeds(&reports)?;
        println!(
            "mean over {} seeds: hits@1 {:.4} ± {:.4}  hits@3 {:.4} ± {:.4}  hits@10 {:.4} ± {:.4}",
            summary.n_runs,
            summary.mean.at1,
            summary.half_range.at1,
            summary.mean.at3,
            summary.half_range.at3,
            summary.mean.at10,
            summary.half_range.at10
        );
        fs::write(dir.join("summary.json"), pretty(&summary))?;
        artifacts.push("summary.json".into());
    }

    let manifest = json!({
        "command": command,
        "fingerprint": fingerprint,
        "tool": concat!("tkg-rag ", env!("CARGO_PKG_VERSION")),
        "created_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "dataset": { "name": cfg.dataset.name, "stats": ds.stats() },
        "config": cfg.canonical(),
        "artifacts": artifacts,
    });
    fs::write(dir.join("manifest.json"), pretty(&manifest))?;
    eprintln!("wrote {} ({command} {fingerprint})", dir.display());
    Ok(())
}

struct Outputs<'a> {
    dir: &'a Path,
    written: &'a mut Vec<String>,
}

impl Outputs<'_> {
    fn file(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_owned());
        self.dir.join(name)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    match d.name.as_str() {
        "synthetic" => return synthetic::planted(&d.planted).map_err(|e| CliError::config("dataset.planted", e)),
        "synthetic-events" => return synthetic::event_graph(&d.events).map_err(|e| CliError::config("dataset.events", e)),
        _ => {}
    }
    let (dir, mut spec) = match Benchmark::from_str(&d.name) {
        Ok(b) => {
            let root = d
                .data_dir
                .clone()
                .or_else(|| std::env::var_os("TKG_DATA_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data"));
            (root.join(b.name()), b.spec())
        }
        Err(_) => (PathBuf::from(&d.name), DatasetSpec::default()),
    };
    if let Some(gap) = d.time_gap {
        spec.time_gap = gap;
    }
    if let Some(format) = d.format {
        spec.format = format;
    }
    if let Some(inverse) = d.inverse {
        spec.inverse = inverse;
    }
    load_dataset(&dir, &spec).map_err(|e| CliError::Invalid(format!("dataset: {e}")))
}

fn bank(cfg: &RunConfig, ds: &Dataset) -> Result<RuleBank, CliError> {
    match &cfg.rules {
        Some(path) => RuleBank::load(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display()))),
        None => learn_rules(&ds.train, &cfg.mining).map_err(|e| CliError::config("mining", e.to_string())),
    }
}

fn queries(cfg: &RunConfig, ds: &Dataset) -> Vec<Query> {
    let mut qs = split_queries(ds, cfg.queries.split);
    if let Some(n) = cfg.queries.limit {
        qs.truncate(n);
    }
    qs
}

fn predictor<'a>(cfg: &RunConfig, ds: &Dataset, bank: &'a RuleBank) -> Result<Box<dyn Predictor + 'a>, CliError> {
    Ok(match cfg.predictor {
        PredictorKind::Oracle => Box::new(RuleScorePredictor::new(bank)),
        PredictorKind::Llm => {
            let url = cfg.endpoint.clone().ok_or_else(|| {
                CliError::config("endpoint", format!("required by the llm predictor (or set {})", tkg_rag::llm::ENDPOINT_ENV))
            })?;
            let client = BlockingClient::new(LlmClient::new(url, cfg.generation.clone())?)?;
            Box::new(LlmPredictor::new(client, &ds.vocab))
        }
    })
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig {
        retrieval: cfg.retrieval.clone(),
        prompt: cfg.prompt.clone(),
        filter: cfg.eval.filter,
        batch_size: cfg.eval.batch_size,
    }
}

fn mine(cfg: &RunConfig, ds: &Dataset, out: PathBuf) -> Result<(), CliError> {
    let bank = learn_rules(&ds.train, &cfg.mining).map_err(|e| CliError::config("mining", e.to_string()))?;
    bank.save(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{} rules for {} head relations", bank.len(), bank.heads().count());
    Ok(())
}

fn retrieve(cfg: &RunConfig, ds: &Dataset, bank: &RuleBank, out: PathBuf) -> Result<(), CliError> {
    let qs = queries(cfg, ds);
    let graph = ds.merged(&Split::ALL);
    let histories = retrieve_batch(&graph, bank, &qs, &cfg.retrieval);
    let mut w = BufWriter::new(File::create(out)?);
    write_jsonl(&mut w, &histories)?;
    w.flush()?;
    let facts: usize = histories.iter().map(|h| h.len()).sum();
    println!("{} histories, {facts} facts", histories.len());
    Ok(())
}

fn prompt(cfg: &RunConfig, ds: &Dataset, bank: &RuleBank, out: PathBuf) -> Result<(), CliError> {
    let qs = queries(cfg, ds);
    let graph = ds.merged(&Split::ALL);
    let histories = retrieve_batch(&graph, bank, &qs, &cfg.retrieval);
    let (prompts, _) = build_prompts(&histories, ds, &cfg.prompt);
    let mut w = BufWriter::new(File::create(out)?);
    for p in &prompts {
        serde_json::to_writer(&mut w, p).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("{} prompts", prompts.len());
    Ok(())
}

fn export(cfg: &RunConfig, ds: &Dataset, bank: &RuleBank, out: &Path) -> Result<(), CliError> {
    let manifest = export_finetune_set(ds, bank, cfg.export.k, &cfg.retrieval, &cfg.prompt, cfg.export.seed, out)
        .map_err(|e| match e {
            PromptError::ShotsOutOfRange { .. } | PromptError::MissingGold => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        })?;
    println!("{} samples from {} training queries", manifest.k, manifest.n_train_queries);
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    index: usize,
    query: &'a Query,
    ranked: &'a [u32],
    names: Vec<&'a str>,
    raw_texts: &'a [String],
    n_unresolved: usize,
}

fn infer(cfg: &RunConfig, ds: &Dataset, bank: &RuleBank, out: PathBuf) -> Result<(), CliError> {
    let qs = queries(cfg, ds);
    if qs.is_empty() {
        return Err(CliError::Invalid(format!("the {} split has no queries", split_name(cfg.queries.split))));
    }
    let predictor = predictor(cfg, ds, bank)?;
    let graph = ds.merged(&Split::ALL);
    let mut w = BufWriter::new(File::create(out)?);
    for (b, batch) in qs.chunks(cfg.eval.batch_size).enumerate() {
        let histories = retrieve_batch(&graph, bank, batch, &cfg.retrieval);
        let (prompts, shown) = build_prompts(&histories, ds, &cfg.prompt);
        let requests: Vec<PredictRequest<'_>> =
            shown.iter().zip(&prompts).map(|(history, prompt)| PredictRequest { history, prompt }).collect();
        for (i, (q, result)) in batch.iter().zip(predictor.predict_batch(&requests)).enumerate() {
            let index = b * cfg.eval.batch_size + i;
            let pred = result.map_err(|e| {
                let _ = w.flush();
                match CliError::from(e) {
                    CliError::Transport(m) => CliError::Transport(format!("query {index}: {m}")),
                    other => other,
                }
            })?;
            let line = PredictionLine {
                index,
                query: q,
                ranked: &pred.ranked,
                names: pred.ranked.iter().map(|&e| ds.vocab.entity_name(e)).collect(),
                raw_texts: &pred.raw_texts,
                n_unresolved: pred.n_unresolved,
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| CliError::Runtime(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    println!("{} predictions", qs.len());
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    ds: &Dataset,
    bank: &RuleBank,
    journal: Option<&Path>,
    out: PathBuf,
) -> Result<EvalReport, CliError> {
    let qs = queries(cfg, ds);
    if qs.is_empty() {
        return Err(CliError::Invalid(format!("the {} split has no queries", split_name(cfg.queries.split))));
    }
    let predictor = predictor(cfg, ds, bank)?;
    let outcome = run_eval(ds, bank, &qs, predictor.as_ref(), &eval_config(cfg), journal)?;
    fs::write(out, pretty(&outcome.report))?;
    Ok(outcome.report)
}

fn ablate(cfg: &RunConfig, ds: &Dataset, bank: &RuleBank, out: &Path) -> Result<Vec<AblationCell>, CliError> {
    let qs = queries(cfg, ds);
    if qs.is_empty() {
        return Err(CliError::Invalid(format!("the {} split has no queries", split_name(cfg.queries.split))));
    }
    let predictor = predictor(cfg, ds, bank)?;
    let mut cache = RetrievalCache::default();
    let cells = ablation_run(ds, bank, &qs, predictor.as_ref(), &eval_config(cfg), &cfg.ablation, &mut cache)?;
    let table = ablation_summary(&cells);
    fs::write(out, &table)?;
    print!("{table}");
    Ok(cells)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn hits_line(seed: &Option<u64>, r: &EvalReport) -> String {
    let tag = seed.map(|s| format!("seed {s}: ")).unwrap_or_default();
    format!(
        "{tag}hits@1 {:.4}  hits@3 {:.4}  hits@10 {:.4}  ({} queries, {} unparsed)",
        r.hits.at1, r.hits.at3, r.hits.at10, r.n_queries, r.n_unparsed
    )
}
