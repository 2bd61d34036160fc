//! Rule-guided history retrieval.
//!
//! For a query `(s, r, ?, t)` the retriever gathers, inside the time window
//! `[t - w, t)`:
//!
//! 1. facts `(s, r, ·, t')` carrying the query relation itself (rule heads);
//! 2. facts `(s, r_b, ·, t')` for the top-k rule bodies of `r`, in bank order.
//!
//! When more than `max_history` facts qualify, head facts win over body facts,
//! body facts are taken group by group in descending rule confidence, and
//! within a group the most recent facts win. The kept facts are finally
//! returned in ascending time.

use std::cmp::Reverse;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, Quadruple, RelationId, TemporalKg, Time};
use crate::rules::RuleBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "s")]
    pub subject: EntityId,
    #[serde(rename = "r")]
    pub relation: RelationId,
    pub t: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<EntityId>,
}

impl Query {
    pub fn new(subject: EntityId, relation: RelationId, t: Time) -> Self {
        Self { subject, relation, t, gold: None }
    }

    /// Object-prediction query for an observed edge, with the object as gold.
    pub fn from_edge(q: &Quadruple) -> Self {
        Self { subject: q.subject, relation: q.relation, t: q.t, gold: Some(q.object) }
    }

    pub fn with_gold(mut self, gold: EntityId) -> Self {
        self.gold = Some(gold);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Window length `w`; `None` searches the whole past `[0, t)`.
    pub window: Option<Time>,
    /// Number of rule bodies used; `None` uses every rule of the relation.
    pub top_k: Option<usize>,
    /// Maximum number of facts kept (`N`).
    pub max_history: usize,
    /// Walk back one window of length `w` at a time, exhausting each window
    /// before moving to the older one.
    pub stepwise: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { window: None, top_k: None, max_history: 50, stepwise: false }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_history == 0 {
            return Err("max_history must be at least 1".into());
        }
        if self.window == Some(0) {
            return Err("window must be at least 1".into());
        }
        Ok(())
    }

    /// Effective window length for a query at `t`.
    fn window_for(&self, t: Time) -> Time {
        self.window.unwrap_or(t).min(t)
    }
}

/// Why a fact was retrieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    RuleHead,
    RuleBody { relation: RelationId, confidence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievedFact {
    #[serde(flatten, with = "wire_quad")]
    pub fact: Quadruple,
    pub provenance: Provenance,
    /// Position in selection priority (0 = selected first).
    pub rank: usize,
    /// Rule group: 0 for head facts, `i + 1` for the i-th rule body.
    #[serde(skip)]
    group: usize,
}

impl RetrievedFact {
    pub fn group(&self) -> usize {
        self.group
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedHistory {
    pub query: Query,
    /// Ascending time; ties by rule group, then object id.
    pub facts: Vec<RetrievedFact>,
}

impl RetrievedHistory {
    pub fn empty(query: Query) -> Self {
        Self { query, facts: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn quadruples(&self) -> impl Iterator<Item = &Quadruple> {
        self.facts.iter().map(|f| &f.fact)
    }

    /// The history retrieving with `max_history = n` would have produced.
    pub fn truncated(&self, n: usize) -> RetrievedHistory {
        Self { query: self.query, facts: self.facts.iter().filter(|f| f.rank < n).copied().collect() }
    }
}

/// Collects the rule-guided history of `query`. Only facts strictly before
/// `query.t` are visible.
pub fn retrieve(kg: &TemporalKg, bank: &RuleBank, query: &Query, cfg: &RetrievalConfig) -> RetrievedHistory {
    let w = cfg.window_for(query.t);
    if w == 0 || cfg.max_history == 0 {
        return RetrievedHistory::empty(*query);
    }

    let mut groups: Vec<(RelationId, Provenance)> = vec![(query.relation, Provenance::RuleHead)];
    let rules = bank.rules_for(query.relation);
    let k = cfg.top_k.unwrap_or(rules.len());
    for rule in rules.iter().take(k) {
        // A repetition rule re-selects the head facts; they keep head provenance.
        if rule.body != query.relation {
            groups.push((rule.body, Provenance::RuleBody { relation: rule.body, confidence: rule.confidence }));
        }
    }

    let steps: Vec<std::ops::Range<Time>> = if cfg.stepwise {
        let mut steps = Vec::new();
        let mut hi = query.t;
        while hi > 0 {
            let lo = hi.saturating_sub(w);
            steps.push(lo..hi);
            hi = lo;
        }
        steps
    } else {
        vec![query.t - w..query.t]
    };

    let mut selected: Vec<RetrievedFact> = Vec::new();
    let mut buf: Vec<Quadruple> = Vec::new();
    'outer: for window in steps {
        for (group, &(relation, provenance)) in groups.iter().enumerate() {
            buf.clear();
            buf.extend(kg.edges_for_iter(query.subject, relation, window.clone()).copied());
            buf.sort_unstable_by_key(|q| (Reverse(q.t), q.object));
            for &fact in &buf {
                if selected.len() == cfg.max_history {
                    break 'outer;
                }
                let rank = selected.len();
                selected.push(RetrievedFact { fact, provenance, rank, group });
            }
        }
    }
    selected.sort_unstable_by_key(|f| (f.fact.t, f.group, f.fact.object));
    RetrievedHistory { query: *query, facts: selected }
}

/// Retrieves histories for many queries in parallel; output order matches input.
pub fn retrieve_batch(
    kg: &TemporalKg,
    bank: &RuleBank,
    queries: &[Query],
    cfg: &RetrievalConfig,
) -> Vec<RetrievedHistory> {
    queries.par_iter().map(|q| retrieve(kg, bank, q, cfg)).collect()
}

/// Writes one JSON object per history:
/// `{"query": {"s", "r", "t", "gold"?}, "facts": [{"s", "r", "o", "t", "provenance", "rank"}]}`.
pub fn write_jsonl<W: Write>(mut out: W, histories: &[RetrievedHistory]) -> io::Result<()> {
    for h in histories {
        serde_json::to_writer(&mut out, h)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

mod wire_quad {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::kg::Quadruple;

    #[derive(Serialize, Deserialize)]
    struct Wire {
        s: u32,
        r: u32,
        o: u32,
        t: u32,
    }

    pub fn serialize<S: Serializer>(q: &Quadruple, ser: S) -> Result<S::Ok, S::Error> {
        Wire { s: q.subject, r: q.relation, o: q.object, t: q.t }.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Quadruple, D::Error> {
        let w = Wire::deserialize(de)?;
        Ok(Quadruple::new(w.s, w.r, w.o, w.t))
    }
}
