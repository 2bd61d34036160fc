//! Prompt rendering and instruction-tuning export.
//!
//! A history fact renders as `t:[subject, relation, n.object]` in index form
//! or `t:[subject, relation, object]` in lexical form; the query is the
//! unfinished line `t:[subject, relation,`. Index numbers are assigned from 0
//! in order of first appearance over the rendered history.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kg::{Dataset, DatasetStats, EntityId, Quadruple, Time, Vocabulary};
use crate::retrieve::{retrieve, Query, RetrievalConfig, RetrievedFact, RetrievedHistory};
use crate::rules::{MiningParams, RuleBank};
use crate::util::{fingerprint, stream};

/// Instruction used when [`PromptConfig::instruction`] is unset; it describes
/// the line layout the format and order produce.
pub fn default_instruction(format: PromptFormat, order: FactOrder) -> String {
    let time = if order == FactOrder::TimestampsRemoved { "" } else { "time:" };
    let (object, answer) = match format {
        PromptFormat::Index => ("index.object", "index.object"),
        PromptFormat::Lexical => ("object", "the object"),
    };
    format!(
        "You must predict the missing object entity at the end of the last quadruplet. \
Each fact has the form {time}[subject, relation, {object}]. Respond with {answer} only."
    )
}

/// Roughly a 4096-token context.
pub const DEFAULT_CHAR_BUDGET: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFormat {
    #[default]
    Index,
    Lexical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FactOrder {
    /// Oldest first, latest fact right above the query.
    #[default]
    Ascending,
    Descending,
    Random { seed: u64 },
    /// Ascending, with timestamps dropped from every line.
    TimestampsRemoved,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub format: PromptFormat,
    pub order: FactOrder,
    /// Facts kept, by retrieval priority.
    pub max_facts: usize,
    /// First line of every prompt; `None` picks [`default_instruction`].
    pub instruction: Option<String>,
    /// Lowest-priority facts are dropped until the text fits.
    pub char_budget: Option<usize>,
}

impl PromptConfig {
    pub fn instruction_text(&self) -> String {
        self.instruction.clone().unwrap_or_else(|| default_instruction(self.format, self.order))
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            format: PromptFormat::Index,
            order: FactOrder::Ascending,
            max_facts: 50,
            instruction: None,
            char_budget: Some(DEFAULT_CHAR_BUDGET),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub query: Query,
    pub format: PromptFormat,
    pub text: String,
    /// Entity behind each index: `index_map[n]` is rendered as `n.name`.
    /// Empty in lexical form.
    pub index_map: Vec<EntityId>,
    /// The trailing unfinished query line.
    pub query_prefix: String,
    /// Facts actually rendered.
    pub n_facts: usize,
}

impl Prompt {
    pub fn index_of(&self, entity: EntityId) -> Option<usize> {
        self.index_map.iter().position(|&e| e == entity)
    }

    pub fn entity_at(&self, index: usize) -> Option<EntityId> {
        self.index_map.get(index).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("query has no gold object")]
    MissingGold,
    #[error("K = {k} is outside 1..={n}")]
    ShotsOutOfRange { k: usize, n: usize },
    #[error("export I/O: {0}")]
    Io(#[from] io::Error),
    #[error("export JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Entity or relation name as it appears in a prompt.
pub fn display_name(name: &str) -> String {
    name.replace(' ', "_")
}

pub fn build_prompt(history: &RetrievedHistory, vocab: &Vocabulary, cfg: &PromptConfig) -> Prompt {
    let mut facts: Vec<RetrievedFact> = history.truncated(cfg.max_facts).facts;
    loop {
        let prompt = render(history.query, &facts, vocab, cfg);
        match cfg.char_budget {
            Some(budget) if prompt.text.chars().count() > budget && !facts.is_empty() => {
                let worst = facts.iter().enumerate().max_by_key(|(_, f)| f.rank).map(|(i, _)| i);
                if let Some(i) = worst {
                    facts.remove(i);
                }
            }
            _ => return prompt,
        }
    }
}

fn render(query: Query, facts: &[RetrievedFact], vocab: &Vocabulary, cfg: &PromptConfig) -> Prompt {
    let mut ordered: Vec<&Quadruple> = facts.iter().map(|f| &f.fact).collect();
    match cfg.order {
        FactOrder::Ascending | FactOrder::TimestampsRemoved => {}
        FactOrder::Descending => ordered.reverse(),
        FactOrder::Random { seed } => {
            let mut rng = stream(&[seed, query.subject as u64, query.relation as u64, query.t as u64]);
            ordered.shuffle(&mut rng);
        }
    }
    let stamp = |t: Time| match cfg.order {
        FactOrder::TimestampsRemoved => String::new(),
        _ => format!("{t}:"),
    };

    let mut index_map: Vec<EntityId> = Vec::new();
    let mut lines = Vec::with_capacity(ordered.len() + 2);
    lines.push(cfg.instruction_text());
    for q in &ordered {
        let s = display_name(vocab.entity_name(q.subject));
        let r = display_name(vocab.relation_name(q.relation));
        let o = display_name(vocab.entity_name(q.object));
        let line = match cfg.format {
            PromptFormat::Index => {
                let n = match index_map.iter().position(|&e| e == q.object) {
                    Some(n) => n,
                    None => {
                        index_map.push(q.object);
                        index_map.len() - 1
                    }
                };
                format!("{}[{s}, {r}, {n}.{o}]", stamp(q.t))
            }
            PromptFormat::Lexical => format!("{}[{s}, {r}, {o}]", stamp(q.t)),
        };
        lines.push(line);
    }
    let query_prefix = format!(
        "{}[{}, {},",
        stamp(query.t),
        display_name(vocab.entity_name(query.subject)),
        display_name(vocab.relation_name(query.relation))
    );
    lines.push(query_prefix.clone());
    Prompt {
        query,
        format: cfg.format,
        text: lines.join("\n"),
        index_map,
        query_prefix,
        n_facts: ordered.len(),
    }
}

/// Training sample whose output completes the query line with the gold object.
pub fn make_instruction_sample(
    history: &RetrievedHistory,
    vocab: &Vocabulary,
    cfg: &PromptConfig,
) -> Result<InstructionSample, PromptError> {
    let gold = history.query.gold.ok_or(PromptError::MissingGold)?;
    let prompt = build_prompt(history, vocab, cfg);
    let instruction = cfg.instruction_text();
    let input = prompt.text[instruction.len()..].trim_start_matches('\n').to_owned();
    let name = display_name(vocab.entity_name(gold));
    let output = match cfg.format {
        PromptFormat::Index => {
            let n = prompt.index_of(gold).unwrap_or(prompt.index_map.len());
            format!("{n}.{name}]")
        }
        PromptFormat::Lexical => format!("{name}]"),
    };
    Ok(InstructionSample { instruction, input, output })
}

/// One history line parsed back into names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLine {
    pub t: Option<Time>,
    pub subject: String,
    pub relation: String,
    pub index: Option<usize>,
    pub object: String,
}

/// Inverse of the line grammar: `[t:][s, r, [n.]o]`. Returns `None` for the
/// query line and for anything else that is not a complete fact.
pub fn parse_fact_line(line: &str, format: PromptFormat) -> Option<ParsedLine> {
    let (t, rest) = match line.split_once(":[") {
        Some((t, rest)) if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) => (Some(t.parse().ok()?), rest),
        _ => (None, line.strip_prefix('[')?),
    };
    let body = rest.strip_suffix(']')?;
    let mut parts = body.splitn(3, ", ");
    let subject = parts.next()?.to_owned();
    let relation = parts.next()?.to_owned();
    let last = parts.next()?;
    let (index, object) = match format {
        PromptFormat::Index => {
            let (n, o) = last.split_once('.')?;
            (Some(n.parse().ok()?), o.to_owned())
        }
        PromptFormat::Lexical => (None, last.to_owned()),
    };
    Some(ParsedLine { t, subject, relation, index, object })
}

/// `k` distinct indices drawn uniformly from `0..n`, sorted ascending.
pub fn sample_fewshot(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, PromptError> {
    if k == 0 || k > n {
        return Err(PromptError::ShotsOutOfRange { k, n });
    }
    let mut rng = stream(&[seed]);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub k: usize,
    pub seed: u64,
    pub n_train_queries: usize,
    pub output: String,
    pub retrieval: RetrievalConfig,
    pub prompt: PromptConfig,
    pub mining: MiningParams,
    pub stats: DatasetStats,
    /// Positions of the exported queries in the time-ordered training set.
    pub sample_indices: Vec<usize>,
    pub fingerprint: String,
}

/// Manifest path written next to an export file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("export");
    out.with_file_name(format!("{stem}.manifest.json"))
}

/// Training queries in temporal order: one per original training edge.
pub fn training_queries(ds: &Dataset) -> Vec<Query> {
    ds.train.base_edges().map(Query::from_edge).collect()
}

/// Writes `k` instruction samples as JSON lines to `out` and a manifest next to it.
///
/// Each sample's history is retrieved from the training split and only sees
/// facts strictly before the sample's own timestamp.
pub fn export_finetune_set(
    ds: &Dataset,
    bank: &RuleBank,
    k: usize,
    retrieval: &RetrievalConfig,
    prompt: &PromptConfig,
    seed: u64,
    out: &Path,
) -> Result<ExportManifest, PromptError> {
    let queries = training_queries(ds);
    let indices = sample_fewshot(queries.len(), k, seed)?;
    let samples = indices
        .par_iter()
        .map(|&i| {
            let history = retrieve(&ds.train, bank, &queries[i], retrieval);
            make_instruction_sample(&history, &ds.vocab, prompt)
        })
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    for s in &samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let mut manifest = ExportManifest {
        k,
        seed,
        n_train_queries: queries.len(),
        output: out.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned(),
        retrieval: retrieval.clone(),
        prompt: prompt.clone(),
        mining: bank.params().clone(),
        stats: ds.stats(),
        sample_indices: indices,
        fingerprint: String::new(),
    };
    manifest.fingerprint = fingerprint(&manifest);
    fs::write(manifest_path(out), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
