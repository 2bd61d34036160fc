//! Time-aware filtered Hits@k, resumable evaluation runs and ablation grids.
//!
//! A run goes query by query through retrieve, prompt, predict, filter and
//! score. Queries whose generations name no entity stay in the denominator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::kg::{Dataset, EntityId, RelationId, Split, TemporalKg, Time};
use crate::llm::{ClientError, PredictRequest, PredictionList, Predictor};
use crate::prompt::{build_prompt, FactOrder, Prompt, PromptConfig, PromptFormat};
use crate::retrieve::{retrieve_batch, Query, RetrievalConfig, RetrievedHistory};
use crate::rules::RuleBank;
use crate::util::fingerprint;

/// Which facts count as "also true" when filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterUniverse {
    #[default]
    AllSplits,
    TestOnly,
}

/// True objects per `(subject, relation, t)`.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    objects: FxHashMap<(EntityId, RelationId, Time), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a TemporalKg>) -> Self {
        let mut objects: FxHashMap<_, Vec<EntityId>> = FxHashMap::default();
        for kg in graphs {
            for q in kg.edges() {
                objects.entry((q.subject, q.relation, q.t)).or_default().push(q.object);
            }
        }
        for v in objects.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { objects }
    }

    pub fn for_dataset(ds: &Dataset, universe: FilterUniverse) -> Self {
        match universe {
            FilterUniverse::AllSplits => Self::new(Split::ALL.iter().map(|s| ds.split(*s))),
            FilterUniverse::TestOnly => Self::new([&ds.test]),
        }
    }

    pub fn is_true(&self, subject: EntityId, relation: RelationId, object: EntityId, t: Time) -> bool {
        self.objects.get(&(subject, relation, t)).is_some_and(|v| v.binary_search(&object).is_ok())
    }
}

/// Drops every prediction other than `gold` that is a true object of the
/// query at its own timestamp. Survivors keep their order.
pub fn time_aware_filter(ranked: &PredictionList, query: &Query, gold: EntityId, facts: &FilterIndex) -> PredictionList {
    let mut out = PredictionList { n_unresolved: ranked.n_unresolved, ..PredictionList::default() };
    for (i, &e) in ranked.ranked.iter().enumerate() {
        if e == gold || !facts.is_true(query.subject, query.relation, e, query.t) {
            out.ranked.push(e);
            if let Some(raw) = ranked.raw_texts.get(i) {
                out.raw_texts.push(raw.clone());
            }
        }
    }
    out
}

/// 1-based position of `gold`.
pub fn rank_of(ranked: &[EntityId], gold: EntityId) -> Option<usize> {
    ranked.iter().position(|&e| e == gold).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Position of the query in the evaluation set.
    pub index: usize,
    pub query: Query,
    pub gold: EntityId,
    /// Predictions after filtering.
    pub ranked: Vec<EntityId>,
    pub rank: Option<usize>,
    /// The predictor produced output but none of it named an entity.
    pub unparsed: bool,
    pub fingerprint: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error("k must be at least 1")]
    BadK,
    #[error("query {index} has no gold object")]
    MissingGold { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("prediction failed at query {index}: {source}")]
    Predict { index: usize, source: ClientError },
    #[error("journal {path}: {message}")]
    Journal { path: String, message: String },
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
}

/// Fraction of records whose gold ranks within the top `k`.
pub fn hits_at_k(records: &[EvalRecord], k: usize) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let hits = records.iter().filter(|r| r.rank.is_some_and(|x| x <= k)).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hits {
    #[serde(rename = "1")]
    pub at1: f64,
    #[serde(rename = "3")]
    pub at3: f64,
    #[serde(rename = "10")]
    pub at10: f64,
}

impl Hits {
    fn map2(self, other: Hits, f: impl Fn(f64, f64) -> f64) -> Hits {
        Hits { at1: f(self.at1, other.at1), at3: f(self.at3, other.at3), at10: f(self.at10, other.at10) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub hits: Hits,
    pub n_queries: usize,
    pub n_unparsed: usize,
}

impl EvalReport {
    pub fn from_records(fingerprint: &str, records: &[EvalRecord]) -> Result<Self, EvalError> {
        Ok(Self {
            fingerprint: fingerprint.to_owned(),
            hits: Hits { at1: hits_at_k(records, 1)?, at3: hits_at_k(records, 3)?, at10: hits_at_k(records, 10)? },
            n_queries: records.len(),
            n_unparsed: records.iter().filter(|r| r.unparsed).count(),
        })
    }
}

/// Mean and half-range of repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n_runs: usize,
    pub mean: Hits,
    pub half_range: Hits,
}

pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedSummary, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty)?.hits;
    let (mut sum, mut lo, mut hi) = (Hits::default(), first, first);
    for r in reports {
        sum = sum.map2(r.hits, |a, b| a + b);
        lo = lo.map2(r.hits, f64::min);
        hi = hi.map2(r.hits, f64::max);
    }
    let n = reports.len() as f64;
    Ok(SeedSummary {
        n_runs: reports.len(),
        mean: sum.map2(sum, |a, _| a / n),
        half_range: hi.map2(lo, |a, b| (a - b) / 2.0),
    })
}

/// Object-prediction queries for every original edge of a split, in edge order.
pub fn split_queries(ds: &Dataset, split: Split) -> Vec<Query> {
    ds.split(split).base_edges().map(Query::from_edge).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub retrieval: RetrievalConfig,
    pub prompt: PromptConfig,
    pub filter: FilterUniverse,
    /// Queries sent to the predictor per batch; the journal is flushed after
    /// each batch.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            prompt: PromptConfig::default(),
            filter: FilterUniverse::AllSplits,
            batch_size: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.retrieval.validate().map_err(EvalError::Config)?;
        if self.batch_size == 0 {
            return Err(EvalError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
}

/// Everything that determines a run's results.
pub fn run_fingerprint(predictor: &dyn Predictor, bank: &RuleBank, queries: &[Query], cfg: &EvalConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        predictor: String,
        bank: String,
        queries: String,
        retrieval: &'a RetrievalConfig,
        prompt: &'a PromptConfig,
        filter: FilterUniverse,
    }
    fingerprint(&Key {
        predictor: predictor.id(),
        bank: fingerprint(&bank.to_json()),
        queries: fingerprint(queries),
        retrieval: &cfg.retrieval,
        prompt: &cfg.prompt,
        filter: cfg.filter,
    })
}

#[derive(Serialize, Deserialize)]
struct JournalHeader {
    fingerprint: String,
    n_queries: usize,
}

/// Append-only JSON-lines progress file: a header line, then one record per
/// finished query in query order.
struct Journal {
    file: File,
    path: String,
}

impl Journal {
    /// Opens or creates the journal and returns the records already in it.
    fn open(path: &Path, fp: &str, n_queries: usize) -> Result<(Self, Vec<EvalRecord>), EvalError> {
        let shown = path.display().to_string();
        let err = |message: String| EvalError::Journal { path: shown.clone(), message };
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut header_seen = false;
            for line in reader.split(b'\n') {
                let line = line?;
                if !header_seen {
                    let Ok(h) = serde_json::from_slice::<JournalHeader>(&line) else { break };
                    if h.fingerprint != fp || h.n_queries != n_queries {
                        return Err(err(format!("belongs to run {}, not {fp}", h.fingerprint)));
                    }
                    header_seen = true;
                } else {
                    // A torn final line from an interrupted write is discarded.
                    let Ok(rec) = serde_json::from_slice::<EvalRecord>(&line) else { break };
                    if rec.index != records.len() {
                        return Err(err(format!("record {} out of order", rec.index)));
                    }
                    records.push(rec);
                }
                valid_len += line.len() as u64 + 1;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.set_len(valid_len)?;
        if valid_len == 0 {
            let header = JournalHeader { fingerprint: fp.to_owned(), n_queries };
            writeln!(file, "{}", serde_json::to_string(&header).map_err(|e| err(e.to_string()))?)?;
        }
        Ok((Self { file, path: shown }, records))
    }

    fn append(&mut self, records: &[EvalRecord]) -> Result<(), EvalError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)
                .map_err(|e| EvalError::Journal { path: self.path.clone(), message: e.to_string() })?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }
}

fn record_for(
    index: usize,
    query: &Query,
    prediction: &PredictionList,
    filter: &FilterIndex,
    fp: &str,
) -> Result<EvalRecord, EvalError> {
    let gold = query.gold.ok_or(EvalError::MissingGold { index })?;
    let filtered = time_aware_filter(prediction, query, gold, filter);
    Ok(EvalRecord {
        index,
        query: *query,
        gold,
        rank: rank_of(&filtered.ranked, gold),
        ranked: filtered.ranked,
        unparsed: prediction.unparsed(),
        fingerprint: fp.to_owned(),
    })
}

/// Prompts for a batch of histories, and the histories cut to what each
/// prompt shows.
pub fn build_prompts(histories: &[RetrievedHistory], ds: &Dataset, cfg: &PromptConfig) -> (Vec<Prompt>, Vec<RetrievedHistory>) {
    use rayon::prelude::*;
    histories
        .par_iter()
        .map(|h| {
            let p = build_prompt(h, &ds.vocab, cfg);
            let shown = h.truncated(p.n_facts);
            (p, shown)
        })
        .unzip()
}

fn predict_records(
    start: usize,
    queries: &[Query],
    histories: &[RetrievedHistory],
    ds: &Dataset,
    predictor: &dyn Predictor,
    prompt_cfg: &PromptConfig,
    filter: &FilterIndex,
    fp: &str,
) -> (Vec<EvalRecord>, Option<EvalError>) {
    let (prompts, shown) = build_prompts(histories, ds, prompt_cfg);
    let requests: Vec<PredictRequest<'_>> =
        shown.iter().zip(&prompts).map(|(history, prompt)| PredictRequest { history, prompt }).collect();
    let mut out = Vec::with_capacity(queries.len());
    for (i, (query, result)) in queries.iter().zip(predictor.predict_batch(&requests)).enumerate() {
        let index = start + i;
        let rec = result
            .map_err(|source| EvalError::Predict { index, source })
            .and_then(|pred| record_for(index, query, &pred, filter, fp));
        match rec {
            Ok(r) => out.push(r),
            Err(e) => return (out, Some(e)),
        }
    }
    (out, None)
}

/// Evaluates `queries` against the union of all splits (strict past only).
///
/// With a journal path, finished records are persisted after every batch and
/// a re-run with the same fingerprint resumes where the last one stopped; on
/// a prediction failure the journal keeps every record before it.
pub fn run_eval(
    ds: &Dataset,
    bank: &RuleBank,
    queries: &[Query],
    predictor: &dyn Predictor,
    cfg: &EvalConfig,
    journal: Option<&Path>,
) -> Result<EvalOutcome, EvalError> {
    cfg.validate()?;
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(index) = queries.iter().position(|q| q.gold.is_none()) {
        return Err(EvalError::MissingGold { index });
    }
    let fp = run_fingerprint(predictor, bank, queries, cfg);
    let (mut journal, mut records) = match journal {
        Some(path) => {
            let (j, recs) = Journal::open(path, &fp, queries.len())?;
            (Some(j), recs)
        }
        None => (None, Vec::new()),
    };
    let graph = ds.merged(&Split::ALL);
    let filter = FilterIndex::for_dataset(ds, cfg.filter);
    while records.len() < queries.len() {
        let start = records.len();
        let end = (start + cfg.batch_size).min(queries.len());
        let batch = &queries[start..end];
        let histories = retrieve_batch(&graph, bank, batch, &cfg.retrieval);
        let (done, failure) = predict_records(start, batch, &histories, ds, predictor, &cfg.prompt, &filter, &fp);
        if let Some(j) = journal.as_mut() {
            j.append(&done)?;
        }
        records.extend(done);
        if let Some(e) = failure {
            return Err(e);
        }
    }
    let report = EvalReport::from_records(&fp, &records)?;
    Ok(EvalOutcome { report, records })
}

/// Prompt configurations crossed in an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub orders: Vec<FactOrder>,
    pub history_lengths: Vec<usize>,
    pub formats: Vec<PromptFormat>,
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<(PromptFormat, FactOrder, usize)> {
        let mut out = Vec::new();
        for &f in &self.formats {
            for &o in &self.orders {
                for &n in &self.history_lengths {
                    out.push((f, o, n));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.cells().is_empty() {
            return Err(EvalError::Config("ablation grid is empty".into()));
        }
        if self.history_lengths.contains(&0) {
            return Err(EvalError::Config("history lengths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub format: PromptFormat,
    pub order: FactOrder,
    pub history_length: usize,
    pub report: EvalReport,
}

/// Histories retrieved once per `(query set, retrieval config)` and shared
/// between grid cells. Shorter histories are cut from the longest one.
#[derive(Default)]
pub struct RetrievalCache {
    entries: HashMap<(String, RetrievalConfig), Vec<RetrievedHistory>>,
    misses: usize,
}

impl RetrievalCache {
    pub fn get(&mut self, kg: &TemporalKg, bank: &RuleBank, queries: &[Query], cfg: &RetrievalConfig) -> &[RetrievedHistory] {
        let key = (fingerprint(queries), cfg.clone());
        self.entries.entry(key).or_insert_with(|| {
            self.misses += 1;
            retrieve_batch(kg, bank, queries, cfg)
        })
    }

    /// Number of times retrieval actually ran.
    pub fn misses(&self) -> usize {
        self.misses
    }
}

/// One report per grid cell. Cells differ only in prompt settings; the
/// history length of a cell caps both retrieval and prompt.
pub fn ablation_run(
    ds: &Dataset,
    bank: &RuleBank,
    queries: &[Query],
    predictor: &dyn Predictor,
    base: &EvalConfig,
    grid: &AblationGrid,
    cache: &mut RetrievalCache,
) -> Result<Vec<AblationCell>, EvalError> {
    base.validate()?;
    grid.validate()?;
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    let graph = ds.merged(&Split::ALL);
    let filter = FilterIndex::for_dataset(ds, base.filter);
    let longest = grid.history_lengths.iter().copied().max().unwrap_or(1);
    let retrieval = RetrievalConfig { max_history: longest, ..base.retrieval.clone() };
    let full = cache.get(&graph, bank, queries, &retrieval).to_vec();

    let mut cells = Vec::new();
    for (format, order, n) in grid.cells() {
        let prompt = PromptConfig { format, order, max_facts: n, ..base.prompt.clone() };
        let cell_cfg = EvalConfig {
            retrieval: RetrievalConfig { max_history: n, ..retrieval.clone() },
            prompt: prompt.clone(),
            ..base.clone()
        };
        let fp = run_fingerprint(predictor, bank, queries, &cell_cfg);
        let histories: Vec<RetrievedHistory> = full.iter().map(|h| h.truncated(n)).collect();
        let mut records = Vec::with_capacity(queries.len());
        for start in (0..queries.len()).step_by(base.batch_size) {
            let end = (start + base.batch_size).min(queries.len());
            let (done, failure) =
                predict_records(start, &queries[start..end], &histories[start..end], ds, predictor, &prompt, &filter, &fp);
            records.extend(done);
            if let Some(e) = failure {
                return Err(e);
            }
        }
        cells.push(AblationCell { format, order, history_length: n, report: EvalReport::from_records(&fp, &records)? });
    }
    Ok(cells)
}

fn order_label(o: &FactOrder) -> String {
    match o {
        FactOrder::Ascending => "ascending".into(),
        FactOrder::Descending => "descending".into(),
        FactOrder::Random { seed } => format!("random:{seed}"),
        FactOrder::TimestampsRemoved => "timestamps-removed".into(),
    }
}

/// Tab-separated summary, one row per cell.
pub fn ablation_summary(cells: &[AblationCell]) -> String {
    let mut out = String::from("format\torder\thistory\thits@1\thits@3\thits@10\tn_queries\tn_unparsed\n");
    for c in cells {
        let format = match c.format {
            PromptFormat::Index => "index",
            PromptFormat::Lexical => "lexical",
        };
        let h = c.report.hits;
        let _ = writeln!(
            out,
            "{format}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            order_label(&c.order),
            c.history_length,
            h.at1,
            h.at3,
            h.at10,
            c.report.n_queries,
            c.report.n_unparsed
        );
    }
    out
}
