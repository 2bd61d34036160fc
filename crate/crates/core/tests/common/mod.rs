//! Index-free reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use proptest::prelude::*;
use tkg_rag::kg::{EntityId, Quadruple, RelationId, TemporalKg, Time, Vocabulary};
use tkg_rag::prompt::{parse_fact_line, FactOrder, PromptFormat};
use tkg_rag::retrieve::{retrieve, Provenance, Query, RetrievalConfig, RetrievedHistory};
use tkg_rag::rules::{RuleBank, TemporalRule};

pub fn vocab(n_entities: u32, n_relations: u32, inverse: bool) -> Arc<Vocabulary> {
    Arc::new(Vocabulary::from_names(
        (0..n_entities).map(|e| format!("e{e}")),
        (0..n_relations).map(|r| format!("r{r}")),
        inverse,
    ))
}

pub fn kg_from(vocab: &Arc<Vocabulary>, edges: &[(u32, u32, u32, u32)]) -> TemporalKg {
    TemporalKg::from_edges(vocab.clone(), edges.iter().map(|&(s, r, o, t)| Quadruple::new(s, r, o, t)))
}

/// Random small graph: (entities, relations, raw edges).
pub fn small_graph(max_edges: usize) -> impl Strategy<Value = (u32, u32, Vec<(u32, u32, u32, u32)>)> {
    (2u32..12, 1u32..5, 1u32..30).prop_flat_map(move |(ne, nr, nt)| {
        let edge = (0..ne, 0..nr, 0..ne, 0..nt);
        (Just(ne), Just(nr), proptest::collection::vec(edge, 1..max_edges))
    })
}

/// `(body_support, rule_support)` by enumerating every body edge.
pub fn enumerate_rule(edges: &[Quadruple], head: RelationId, body: RelationId) -> (u64, u64) {
    let bodies: BTreeSet<_> = edges.iter().filter(|q| q.relation == body).map(Quadruple::sort_key).collect();
    let followed = bodies
        .iter()
        .filter(|&&(t, s, _, o)| edges.iter().any(|h| h.relation == head && h.subject == s && h.object == o && h.t > t))
        .count();
    (bodies.len() as u64, followed as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefFact {
    pub fact: Quadruple,
    pub provenance: Provenance,
    pub rank: usize,
}

/// Retrieval by scanning the whole edge list.
pub fn reference_retrieve(edges: &[Quadruple], bank: &RuleBank, query: &Query, cfg: &RetrievalConfig) -> Vec<RefFact> {
    let w = cfg.window.map_or(query.t, |w| w.min(query.t));
    if w == 0 {
        return Vec::new();
    }
    let mut groups = vec![(query.relation, Provenance::RuleHead)];
    let rules = bank.rules_for(query.relation);
    for r in rules.iter().take(cfg.top_k.unwrap_or(usize::MAX)) {
        if r.body != query.relation {
            groups.push((r.body, Provenance::RuleBody { relation: r.body, confidence: r.confidence }));
        }
    }
    let mut windows = Vec::new();
    if cfg.stepwise {
        let mut hi = query.t;
        while hi > 0 {
            let lo = hi.saturating_sub(w);
            windows.push((lo, hi));
            hi = lo;
        }
    } else {
        windows.push((query.t - w, query.t));
    }
    let mut picked: Vec<(RefFact, usize)> = Vec::new();
    for (lo, hi) in windows {
        for (g, &(rel, prov)) in groups.iter().enumerate() {
            let mut cands: Vec<&Quadruple> = edges
                .iter()
                .filter(|q| q.subject == query.subject && q.relation == rel && q.t >= lo && q.t < hi)
                .collect();
            cands.sort_by(|a, b| b.t.cmp(&a.t).then(a.object.cmp(&b.object)));
            for q in cands {
                if picked.len() < cfg.max_history {
                    picked.push((RefFact { fact: *q, provenance: prov, rank: picked.len() }, g));
                }
            }
        }
    }
    picked.sort_by(|(a, ga), (b, gb)| a.fact.t.cmp(&b.fact.t).then(ga.cmp(gb)).then(a.fact.object.cmp(&b.fact.object)));
    picked.into_iter().map(|(f, _)| f).collect()
}

/// Scores objects of retrieved facts by rule evidence; ties to the most
/// recent support, then the lower id.
pub fn reference_scores(facts: &[Quadruple], bank: &RuleBank, query: &Query) -> Vec<EntityId> {
    let mut score: HashMap<EntityId, (f64, Time)> = HashMap::new();
    let mut sorted: Vec<&Quadruple> = facts.iter().collect();
    sorted.sort_by_key(|q| q.sort_key());
    for q in sorted {
        let conf = bank.rules_for(query.relation).iter().find(|r| r.body == q.relation).map_or(0.0, |r| r.confidence);
        let w = conf + if q.relation == query.relation { 1.0 } else { 0.0 };
        if w > 0.0 {
            let e = score.entry(q.object).or_insert((0.0, 0));
            e.0 += w;
            e.1 = e.1.max(q.t);
        }
    }
    let mut v: Vec<(EntityId, f64, Time)> = score.into_iter().map(|(o, (s, t))| (o, s, t)).collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    v.into_iter().take(10).map(|x| x.0).collect()
}

/// Problems found when auditing one exported sample against the graph it
/// was drawn from: every history line must be a known fact about the query
/// subject, strictly before the query time.
pub fn leakage_problems(input: &str, train: &TemporalKg, format: PromptFormat) -> Vec<String> {
    let vocab = train.vocab();
    let mut lines: Vec<&str> = input.lines().collect();
    let Some(query_line) = lines.pop() else { return vec!["empty input".into()] };
    let (qt, rest) = query_line.split_once(":[").unwrap_or(("", query_line));
    let Ok(qt) = qt.parse::<Time>() else { return vec![format!("bad query line {query_line}")] };
    let subject = rest.split(", ").next().unwrap_or_default();
    let mut problems = Vec::new();
    for line in lines {
        let Some(p) = parse_fact_line(line, format) else {
            problems.push(format!("unparseable line {line}"));
            continue;
        };
        let t = p.t.unwrap_or(Time::MAX);
        if t >= qt {
            problems.push(format!("future fact {line} for query at {qt}"));
        }
        if p.subject != subject {
            problems.push(format!("fact {line} is not about {subject}"));
        }
        let id = |name: &str, rel: bool| {
            let lookup = if rel { &vocab.relations } else { &vocab.entities };
            lookup.names().position(|n| n.replace(' ', "_") == name).map(|i| i as u32)
        };
        let known = match (id(&p.subject, false), id(&p.relation, true), id(&p.object, false)) {
            (Some(s), Some(r), Some(o)) => train.contains(&Quadruple::new(s, r, o, t)),
            _ => false,
        };
        if !known {
            problems.push(format!("fact {line} is not in the graph"));
        }
    }
    problems
}

/// A short history with multi-word names, a repeated object and a rule body.
pub fn golden_history() -> (Arc<Vocabulary>, RetrievedHistory) {
    let vocab = Arc::new(Vocabulary::from_names(
        ["Abdul", "Citizen (Nigeria)", "Ministry of Defence", "Barack Obama"],
        ["Make an appeal or request", "Consult", "Express intent to meet"],
        true,
    ));
    let edges = [
        (0, 0, 1, 301),
        (0, 1, 2, 305),
        (0, 0, 3, 310),
        (0, 2, 1, 320),
        (0, 0, 1, 330),
        (1, 0, 0, 331),
    ];
    let kg = TemporalKg::from_edges(vocab.clone(), edges.map(|(s, r, o, t)| Quadruple::new(s, r, o, t)));
    let mk = |body, rs| TemporalRule { head: 0, body, body_support: 10, rule_support: rs, confidence: rs as f64 / 10.0 };
    let bank = RuleBank::from_rules(Default::default(), [mk(1, 6), mk(2, 3)]).unwrap();
    let history = retrieve(&kg, &bank, &Query::new(0, 0, 334).with_gold(2), &RetrievalConfig::default());
    (vocab, history)
}

pub fn golden_file(format: PromptFormat, order: &str) -> PathBuf {
    let f = if format == PromptFormat::Index { "index" } else { "lexical" };
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{f}_{order}.txt"))
}

pub const ORDERS: [(&str, FactOrder); 4] = [
    ("ascending", FactOrder::Ascending),
    ("descending", FactOrder::Descending),
    ("random", FactOrder::Random { seed: 7 }),
    ("timestamps_removed", FactOrder::TimestampsRemoved),
];
