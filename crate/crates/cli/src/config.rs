//! Run configuration: a JSON document whose every field can be overridden
//! from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tkg_rag::eval::{AblationGrid, FilterUniverse};
use tkg_rag::kg::IdFormat;
use tkg_rag::llm::GenParams;
use tkg_rag::prompt::{FactOrder, PromptConfig, PromptFormat};
use tkg_rag::synthetic::{EventGraphConfig, PlantedConfig};
use tkg_rag::{MiningParams, RetrievalConfig, Split};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub mining: MiningParams,
    /// Rule bank to load instead of mining one from the training split.
    pub rules: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub prompt: PromptConfig,
    pub generation: GenParams,
    /// Completion endpoint; falls back to `TKG_RAG_ENDPOINT`.
    pub endpoint: Option<String>,
    pub predictor: PredictorKind,
    pub queries: QueryConfig,
    pub eval: EvalSection,
    pub export: ExportSection,
    pub ablation: AblationGrid,
    /// Replicate the run once per seed. Each replica uses its seed for
    /// mining, export sampling and random fact order.
    pub seeds: Vec<u64>,
    /// Artifact directory; defaults to `runs/<command>-<fingerprint>`.
    pub output: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            mining: MiningParams::default(),
            rules: None,
            retrieval: RetrievalConfig::default(),
            prompt: PromptConfig::default(),
            generation: GenParams::default(),
            endpoint: None,
            predictor: PredictorKind::Oracle,
            queries: QueryConfig::default(),
            eval: EvalSection::default(),
            export: ExportSection::default(),
            ablation: AblationGrid {
                orders: vec![
                    FactOrder::Ascending,
                    FactOrder::Descending,
                    FactOrder::Random { seed: 0 },
                    FactOrder::TimestampsRemoved,
                ],
                history_lengths: vec![10, 20, 50],
                formats: vec![PromptFormat::Index, PromptFormat::Lexical],
            },
            seeds: Vec::new(),
            output: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `synthetic`, `synthetic-events`, a benchmark preset
    /// (`icews14`, `icews18`, `gdelt`, `yago`) or a directory.
    pub name: String,
    /// Where preset directories live; defaults to `$TKG_DATA_DIR` or `data`.
    pub data_dir: Option<PathBuf>,
    pub time_gap: Option<u64>,
    pub format: Option<IdFormat>,
    pub inverse: Option<bool>,
    pub planted: PlantedConfig,
    pub events: EventGraphConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            data_dir: None,
            time_gap: None,
            format: None,
            inverse: None,
            planted: PlantedConfig::default(),
            events: EventGraphConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// Rule-confidence scoring of the retrieved history; no network.
    #[default]
    Oracle,
    /// The completion endpoint.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub split: Split,
    /// Keep only the first this many queries of the split.
    pub limit: Option<usize>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { split: Split::Test, limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub filter: FilterUniverse,
    pub batch_size: usize,
    /// Persist records as they finish and resume from them.
    pub journal: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { filter: FilterUniverse::AllSplits, batch_size: 64, journal: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub k: usize,
    pub seed: u64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { k: 1024, seed: 0 }
    }
}

/// One `path = value` assignment into the config document.
#[derive(Debug, Clone)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn new(path: &str, value: impl Into<Value>) -> Self {
        Self { path: path.to_owned(), value: value.into() }
    }

    /// Parses `a.b.c=VALUE`; VALUE is read as JSON, or as a string when it is
    /// not valid JSON.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (path, raw) = text.split_once('=').ok_or_else(|| format!("expected PATH=VALUE, got `{text}`"))?;
        if path.is_empty() {
            return Err(format!("empty path in `{text}`"));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        Ok(Self::new(path, value))
    }

    fn apply(&self, doc: &mut Value) -> Result<(), CliError> {
        let mut node = doc;
        let mut parts = self.path.split('.').peekable();
        while let Some(key) = parts.next() {
            let Value::Object(map) = node else {
                return Err(CliError::config(&self.path, "parent is not an object"));
            };
            if parts.peek().is_none() {
                map.insert(key.to_owned(), self.value.clone());
                return Ok(());
            }
            node = map.entry(key).or_insert_with(|| Value::Object(Default::default()));
            if node.is_null() {
                *node = Value::Object(Default::default());
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Defaults, then the file, then the overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[Override]) -> Result<Self, CliError> {
        let mut doc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let parsed: RunConfig = serde_path_to_error::deserialize(de)
                    .map_err(|e| CliError::config(&e.path().to_string(), e.inner().to_string()))?;
                serde_json::to_value(parsed).expect("config serializes")
            }
            None => serde_json::to_value(RunConfig::default()).expect("config serializes"),
        };
        for o in overrides {
            o.apply(&mut doc)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(doc)
            .map_err(|e| CliError::config(&e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.mining.validate().map_err(|e| CliError::config("mining", e.to_string()))?;
        self.retrieval.validate().map_err(|e| CliError::config("retrieval", e))?;
        self.generation.validate().map_err(|e| CliError::config("generation", e))?;
        if self.prompt.max_facts == 0 {
            return Err(CliError::config("prompt.max_facts", "must be at least 1"));
        }
        if self.dataset.time_gap == Some(0) {
            return Err(CliError::config("dataset.time_gap", "must be positive"));
        }
        if self.dataset.name.starts_with("synthetic") {
            self.dataset.planted.validate().map_err(|e| CliError::config("dataset.planted", e))?;
        }
        if self.queries.limit == Some(0) {
            return Err(CliError::config("queries.limit", "must be at least 1"));
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::config("eval.batch_size", "must be at least 1"));
        }
        if self.export.k == 0 {
            return Err(CliError::config("export.k", "must be at least 1"));
        }
        if self.ablation.orders.is_empty() || self.ablation.formats.is_empty() || self.ablation.history_lengths.is_empty() {
            return Err(CliError::config("ablation", "every axis needs at least one value"));
        }
        if self.ablation.history_lengths.contains(&0) {
            return Err(CliError::config("ablation.history_lengths", "lengths must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads", "must be at least 1"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(CliError::config("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    /// One config per seed, with the seed applied everywhere; a single
    /// unchanged copy when no seeds are listed.
    pub fn replicas(&self) -> Vec<(Option<u64>, RunConfig)> {
        if self.seeds.is_empty() {
            return vec![(None, self.clone())];
        }
        self.seeds
            .iter()
            .map(|&seed| {
                let mut cfg = self.clone();
                cfg.mining.seed = seed;
                cfg.export.seed = seed;
                if let FactOrder::Random { .. } = cfg.prompt.order {
                    cfg.prompt.order = FactOrder::Random { seed };
                }
                for o in &mut cfg.ablation.orders {
                    if let FactOrder::Random { .. } = o {
                        *o = FactOrder::Random { seed };
                    }
                }
                (Some(seed), cfg)
            })
            .collect()
    }

    /// The config without settings that cannot change results.
    pub fn canonical(&self) -> RunConfig {
        RunConfig { output: None, threads: None, ..self.clone() }
    }

    /// Hash of everything that affects results for `command`.
    pub fn fingerprint(&self, command: &str) -> String {
        tkg_rag::fingerprint(&serde_json::json!({ "command": command, "config": self.canonical() }))
    }
}
