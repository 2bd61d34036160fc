//! Turning prompts into ranked entity predictions.
//!
//! Predictions come either from an external completion endpoint
//! ([`LlmPredictor`]) or from [`RuleScorePredictor`], which scores the
//! retrieved history directly with rule confidences and needs no model.

mod client;
mod oracle;
pub mod stub;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use client::{BlockingClient, ClientError, GenParams, LlmClient, ENDPOINT_ENV};
pub use oracle::{rule_score_predict, RuleScorePredictor};

use crate::kg::{EntityId, Vocabulary};
use crate::prompt::{display_name, Prompt};
use crate::retrieve::RetrievedHistory;

/// Longest ranked list kept; Hits@10 needs no more.
pub const MAX_PREDICTIONS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionList {
    /// Distinct entities, best first.
    pub ranked: Vec<EntityId>,
    /// The generation each ranked entity was read from.
    pub raw_texts: Vec<String>,
    /// Generations that resolved to no entity.
    pub n_unresolved: usize,
}

impl PredictionList {
    pub fn from_ranked(ranked: Vec<EntityId>) -> Self {
        Self { ranked, ..Self::default() }
    }

    /// True when the model produced output but none of it named an entity.
    pub fn unparsed(&self) -> bool {
        self.ranked.is_empty() && self.n_unresolved > 0
    }

    fn push(&mut self, id: EntityId, raw: &str) -> bool {
        if self.ranked.len() >= MAX_PREDICTIONS {
            return false;
        }
        if !self.ranked.contains(&id) {
            self.ranked.push(id);
            self.raw_texts.push(raw.to_owned());
        }
        true
    }
}

/// Entity lookup by prompt-rendered name (spaces replaced by underscores).
#[derive(Debug, Clone)]
pub struct EntityNames {
    by_name: HashMap<String, EntityId>,
    len: usize,
}

impl EntityNames {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut by_name = HashMap::with_capacity(vocab.entity_count());
        for (id, name) in vocab.entities.names().enumerate() {
            by_name.entry(display_name(name)).or_insert(id as EntityId);
        }
        Self { by_name, len: vocab.entity_count() }
    }

    pub fn resolve(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(&display_name(name.trim())).copied()
    }

    fn contains(&self, id: EntityId) -> bool {
        (id as usize) < self.len
    }
}

/// Reads ranked entities out of generations, best first.
///
/// Each completion is cut at the first `]` or newline, then read as
/// `n.name` (index, cross-checked against the name), bare `n` (index), or a
/// bare entity name. Completions that resolve to nothing are counted in
/// `n_unresolved`.
pub fn parse_predictions(completions: &[String], prompt: &Prompt, names: &EntityNames) -> PredictionList {
    let mut out = PredictionList::default();
    for raw in completions {
        match resolve_completion(raw, prompt, names) {
            Some(id) if names.contains(id) => {
                if !out.push(id, raw) {
                    break;
                }
            }
            _ => out.n_unresolved += 1,
        }
    }
    out
}

fn resolve_completion(raw: &str, prompt: &Prompt, names: &EntityNames) -> Option<EntityId> {
    let text = raw.split([']', '\n']).next().unwrap_or_default().trim();
    if text.is_empty() {
        return None;
    }
    let by_index = |n: &str| n.parse::<usize>().ok().and_then(|n| prompt.entity_at(n));
    if let Some((n, name)) = text.split_once('.') {
        if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) {
            let named = names.resolve(name);
            return match (by_index(n), named) {
                (Some(id), Some(named)) if id == named => Some(id),
                (_, Some(named)) => Some(named),
                (Some(_), None) | (None, None) => names.resolve(text),
            };
        }
    }
    if text.bytes().all(|b| b.is_ascii_digit()) {
        if let Some(id) = by_index(text) {
            return Some(id);
        }
    }
    names.resolve(text)
}

/// Everything a predictor may look at for one query.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a> {
    /// History already cut to the facts the prompt shows.
    pub history: &'a RetrievedHistory,
    pub prompt: &'a Prompt,
}

/// Batch prediction; results come back in request order.
pub trait Predictor: Sync {
    /// Identifies the predictor in run fingerprints.
    fn id(&self) -> String;

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<PredictionList, ClientError>>;
}

/// Predictions from a completion endpoint.
pub struct LlmPredictor {
    client: BlockingClient,
    names: EntityNames,
}

impl LlmPredictor {
    pub fn new(client: BlockingClient, vocab: &Vocabulary) -> Self {
        Self { client, names: EntityNames::new(vocab) }
    }
}

impl Predictor for LlmPredictor {
    fn id(&self) -> String {
        format!("llm:{}:{}", self.client.endpoint(), crate::util::fingerprint(self.client.params()))
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<PredictionList, ClientError>> {
        let prompts: Vec<&Prompt> = requests.iter().map(|r| r.prompt).collect();
        self.client
            .generate_many(&prompts)
            .into_iter()
            .zip(&prompts)
            .map(|(res, prompt)| res.map(|texts| parse_predictions(&texts, prompt, &self.names)))
            .collect()
    }
}
