//! Length-1 cyclic temporal rule mining.
//!
//! For a head relation `r_h`, head edges `(e1, r_h, e2, t)` are drawn
//! uniformly. From each head edge a single backward step is taken to an edge
//! `(e2, r, e1, t')` with `t' < t`, chosen with probability proportional to
//! `exp(t' - t)`. That step closes a cycle and proposes the rule
//! `(E1, r_h, E2, T2) <- (E1, r_b, E2, T1)`, where `r_b` is the inverse of `r`
//! when the graph carries inverse relations. Every proposed rule is then scored
//! by counting body groundings and the groundings followed by the head.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, Quadruple, RelationId, TemporalKg, Time};
use crate::util::stream;

/// Absolute tolerance when checking a stored confidence against its supports.
const CONFIDENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    /// Walks per head relation.
    pub num_walks: usize,
    /// Only 1 is supported.
    pub rule_length: usize,
    /// Rules with fewer body groundings are dropped.
    pub min_body_support: u64,
    /// Body groundings are enumerated up to this many, then sampled.
    pub grounding_cap: u64,
    pub seed: u64,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self { num_walks: 200, rule_length: 1, min_body_support: 2, grounding_cap: 100_000, seed: 0 }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<(), MiningError> {
        if self.rule_length != 1 {
            return Err(MiningError::InvalidParams(format!(
                "rule_length must be 1, got {}",
                self.rule_length
            )));
        }
        if self.num_walks == 0 {
            return Err(MiningError::InvalidParams("num_walks must be at least 1".into()));
        }
        if self.grounding_cap == 0 {
            return Err(MiningError::InvalidParams("grounding_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalRule {
    pub head: RelationId,
    pub body: RelationId,
    pub body_support: u64,
    pub rule_support: u64,
    pub confidence: f64,
}

/// Support counts of one rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleEstimate {
    pub body_support: u64,
    pub rule_support: u64,
    pub confidence: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("invalid mining parameters: {0}")]
    InvalidParams(String),
    #[error("transition candidate set is empty")]
    EmptyCandidates,
    #[error("candidate at t={candidate} is not strictly before t={t}")]
    NotInPast { candidate: Time, t: Time },
    #[error("head edge {0} is not in the graph")]
    HeadNotInGraph(Quadruple),
    #[error("cannot mine rules on an empty graph")]
    EmptyGraph,
}

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("rule bank I/O: {0}")]
    Io(#[from] io::Error),
    #[error("rule bank JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid rule bank: {0}")]
    Invalid(String),
}

/// Probability of each candidate under exponential time weighting,
/// `exp(t_u - t) / sum exp(t_v - t)`.
pub fn transition_distribution(candidates: &[Quadruple], t: Time) -> Result<Vec<f64>, MiningError> {
    transition_from_times(candidates.iter().map(|q| q.t), t)
}

pub(crate) fn transition_from_times(
    times: impl Iterator<Item = Time> + Clone,
    t: Time,
) -> Result<Vec<f64>, MiningError> {
    let mut latest = None;
    for tu in times.clone() {
        if tu >= t {
            return Err(MiningError::NotInPast { candidate: tu, t });
        }
        latest = latest.max(Some(tu));
    }
    let latest = latest.ok_or(MiningError::EmptyCandidates)?;
    // Offsets from the latest candidate are computed in integers, which makes
    // the result exactly invariant to a shift of all timestamps.
    let mut weights: Vec<f64> = times.map(|tu| (-f64::from(latest - tu)).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Takes one backward step from `head` and returns the relation of the edge it
/// lands on, or `None` when no edge returns to the head's subject in the past.
pub fn sample_walk<R: Rng + ?Sized>(
    kg: &TemporalKg,
    head: &Quadruple,
    rng: &mut R,
) -> Result<Option<RelationId>, MiningError> {
    if !kg.contains(head) {
        return Err(MiningError::HeadNotInGraph(*head));
    }
    Ok(walk_step(kg, head, rng))
}

fn walk_step<R: Rng + ?Sized>(kg: &TemporalKg, head: &Quadruple, rng: &mut R) -> Option<RelationId> {
    let candidates = kg.edges_between(head.object, head.subject, head.t);
    match candidates {
        [] => None,
        [only] => Some(kg.edge(*only).relation),
        _ => {
            let probs = transition_from_times(candidates.iter().map(|&p| kg.edge(p).t), head.t).ok()?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (p, &pos) in probs.iter().zip(candidates) {
                acc += p;
                if u < acc {
                    return Some(kg.edge(pos).relation);
                }
            }
            candidates.last().map(|&p| kg.edge(p).relation)
        }
    }
}

/// Latest time of each `(subject, object)` pair under one relation.
struct HeadIndex(FxHashMap<(EntityId, EntityId), Time>);

impl HeadIndex {
    fn new(kg: &TemporalKg, head: RelationId) -> Self {
        let mut latest = FxHashMap::default();
        for &p in kg.positions_for_relation(head) {
            let q = kg.edge(p);
            let slot = latest.entry((q.subject, q.object)).or_insert(q.t);
            *slot = (*slot).max(q.t);
        }
        Self(latest)
    }

    fn followed(&self, q: &Quadruple) -> bool {
        self.0.get(&(q.subject, q.object)).is_some_and(|&t| t > q.t)
    }
}

/// Counts body groundings `(E1, body, E2, T1)` and those followed by
/// `(E1, head, E2, T2)` with `T2 > T1`. Returns `None` when the body has no
/// groundings.
///
/// With more than `grounding_cap` groundings, a uniform sample of `grounding_cap`
/// of them is scored instead.
pub fn estimate_confidence<R: Rng + ?Sized>(
    kg: &TemporalKg,
    head: RelationId,
    body: RelationId,
    grounding_cap: u64,
    rng: &mut R,
) -> Result<Option<RuleEstimate>, MiningError> {
    if grounding_cap == 0 {
        return Err(MiningError::InvalidParams("grounding_cap must be at least 1".into()));
    }
    Ok(estimate_with(kg, &HeadIndex::new(kg, head), body, grounding_cap, rng))
}

fn estimate_with<R: Rng + ?Sized>(
    kg: &TemporalKg,
    heads: &HeadIndex,
    body: RelationId,
    grounding_cap: u64,
    rng: &mut R,
) -> Option<RuleEstimate> {
    let groundings = kg.positions_for_relation(body);
    if groundings.is_empty() {
        return None;
    }
    let (body_support, rule_support) = if groundings.len() as u64 <= grounding_cap {
        let hits = groundings.iter().filter(|&&p| heads.followed(kg.edge(p))).count();
        (groundings.len() as u64, hits as u64)
    } else {
        let picked = index::sample(rng, groundings.len(), grounding_cap as usize);
        let hits = picked.iter().filter(|&i| heads.followed(kg.edge(groundings[i]))).count();
        (grounding_cap, hits as u64)
    };
    Some(RuleEstimate { body_support, rule_support, confidence: rule_support as f64 / body_support as f64 })
}

// Stream tags keep walk and sampling RNGs disjoint.
const WALK_STREAM: u64 = 1;
const SUPPORT_STREAM: u64 = 2;

/// Mines rules for every original relation present in `kg`.
///
/// Each walk draws from its own RNG stream derived from
/// `(seed, head, walk index)`, so the result does not depend on thread
/// scheduling and raising `num_walks` only adds walks.
pub fn learn_rules(kg: &TemporalKg, params: &MiningParams) -> Result<RuleBank, MiningError> {
    params.validate()?;
    if kg.is_empty() {
        return Err(MiningError::EmptyGraph);
    }
    let vocab = kg.vocab();
    let heads: Vec<RelationId> = (0..vocab.base_relation_count())
        .filter(|&r| !kg.positions_for_relation(r).is_empty())
        .collect();

    let mined: Vec<(RelationId, Vec<TemporalRule>)> = heads
        .par_iter()
        .map(|&head| {
            let bodies = propose_bodies(kg, head, params);
            let index = HeadIndex::new(kg, head);
            let mut rules: Vec<TemporalRule> = bodies
                .into_iter()
                .filter_map(|body| {
                    let mut rng = stream(&[params.seed, SUPPORT_STREAM, head as u64, body as u64]);
                    let est = estimate_with(kg, &index, body, params.grounding_cap, &mut rng)?;
                    (est.rule_support >= 1 && est.body_support >= params.min_body_support).then_some(
                        TemporalRule {
                            head,
                            body,
                            body_support: est.body_support,
                            rule_support: est.rule_support,
                            confidence: est.confidence,
                        },
                    )
                })
                .collect();
            rules.sort_by(rule_order);
            (head, rules)
        })
        .collect();

    let rules = mined.into_iter().filter(|(_, r)| !r.is_empty()).collect();
    Ok(RuleBank { params: params.clone(), rules })
}

/// Distinct body relations proposed by the walks for one head relation.
fn propose_bodies(kg: &TemporalKg, head: RelationId, params: &MiningParams) -> BTreeSet<RelationId> {
    let vocab = kg.vocab();
    let positions = kg.positions_for_relation(head);
    let mut bodies = BTreeSet::new();
    for walk in 0..params.num_walks {
        let mut rng = stream(&[params.seed, WALK_STREAM, head as u64, walk as u64]);
        let edge = kg.edge(positions[rng.random_range(0..positions.len())]);
        if let Some(step) = walk_step(kg, edge, &mut rng) {
            // The step edge runs e2 -> e1; the body with head orientation is its inverse.
            bodies.insert(vocab.inverse_of(step).unwrap_or(step));
        }
    }
    bodies
}

/// Confidence descending, then rule support descending, then body id ascending.
pub fn rule_order(a: &TemporalRule, b: &TemporalRule) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.rule_support.cmp(&a.rule_support))
        .then(a.body.cmp(&b.body))
}

/// Mined rules grouped by head relation, each group in [`rule_order`].
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBank {
    params: MiningParams,
    rules: BTreeMap<RelationId, Vec<TemporalRule>>,
}

#[derive(Serialize, Deserialize)]
struct BankDoc {
    params: MiningParams,
    rules: Vec<TemporalRule>,
}

impl RuleBank {
    /// Builds a bank from arbitrary rules, validating and sorting them.
    pub fn from_rules(params: MiningParams, rules: impl IntoIterator<Item = TemporalRule>) -> Result<Self, BankError> {
        let mut grouped: BTreeMap<RelationId, Vec<TemporalRule>> = BTreeMap::new();
        for rule in rules {
            check_rule(&rule)?;
            grouped.entry(rule.head).or_default().push(rule);
        }
        for (head, group) in &mut grouped {
            group.sort_by(rule_order);
            if group.iter().map(|r| r.body).collect::<BTreeSet<_>>().len() != group.len() {
                return Err(BankError::Invalid(format!("duplicate body relation under head {head}")));
            }
        }
        Ok(Self { params, rules: grouped })
    }

    pub fn params(&self) -> &MiningParams {
        &self.params
    }

    /// Rules for `head` in descending confidence.
    pub fn rules_for(&self, head: RelationId) -> &[TemporalRule] {
        self.rules.get(&head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn confidence(&self, head: RelationId, body: RelationId) -> Option<f64> {
        self.rules_for(head).iter().find(|r| r.body == body).map(|r| r.confidence)
    }

    pub fn heads(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.rules.keys().copied()
    }

    /// All rules, grouped by head ascending.
    pub fn iter(&self) -> impl Iterator<Item = &TemporalRule> {
        self.rules.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.rules.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = BankDoc { params: self.params.clone(), rules: self.iter().copied().collect() };
        serde_json::to_string_pretty(&doc).expect("rule bank serializes")
    }

    /// Parses and validates a bank; rules must already be in bank order.
    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let doc: BankDoc = serde_json::from_str(text)?;
        let bank = Self::from_rules(doc.params, doc.rules.iter().copied())?;
        if !bank.iter().zip(&doc.rules).all(|(a, b)| a.head == b.head && a.body == b.body) {
            return Err(BankError::Invalid("rules are not in bank order".into()));
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<(), BankError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BankError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn check_rule(rule: &TemporalRule) -> Result<(), BankError> {
    let bad = |msg: &str| Err(BankError::Invalid(format!("rule {} <- {}: {msg}", rule.head, rule.body)));
    if rule.rule_support == 0 {
        return bad("rule_support must be at least 1");
    }
    if rule.rule_support > rule.body_support {
        return bad("rule_support exceeds body_support");
    }
    let expected = rule.rule_support as f64 / rule.body_support as f64;
    if !((rule.confidence - expected).abs() <= CONFIDENCE_TOLERANCE) {
        return bad("confidence does not equal rule_support / body_support");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kg::Vocabulary;
    use crate::util::stream;

    fn q(s: u32, r: u32, o: u32, t: u32) -> Quadruple {
        Quadruple::new(s, r, o, t)
    }

    fn graph(entities: usize, relations: &[&str], inverse: bool, edges: &[Quadruple]) -> TemporalKg {
        let names: Vec<String> = (0..entities).map(|i| format!("e{i}")).collect();
        let vocab = Arc::new(Vocabulary::from_names(names, relations, inverse));
        TemporalKg::from_edges(vocab, edges.iter().copied())
    }

    /// Reference: p_u = 1 / sum_v exp(t_v - t_u), summed with compensation.
    fn reference(times: &[u32], _t: u32) -> Vec<f64> {
        times
            .iter()
            .map(|&tu| {
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for &tv in times {
                    let term = (tv as f64 - tu as f64).exp();
                    let y = term - comp;
                    let s = sum + y;
                    comp = (s - sum) - y;
                    sum = s;
                }
                1.0 / sum
            })
            .collect()
    }

    #[test]
    fn transition_two_candidates() {
        let cands = [q(0, 0, 1, 3), q(0, 0, 1, 5)];
        let p = transition_distribution(&cands, 6).unwrap();
        // exp(-3), exp(-1) normalized; high-precision values.
        assert!((p[0] - 0.119_202_922_022_117_56).abs() < 1e-15);
        assert!((p[1] - 0.880_797_077_977_882_4).abs() < 1e-15);
    }

    #[test]
    fn transition_single_and_symmetric() {
        assert_eq!(transition_distribution(&[q(0, 0, 1, 2)], 9).unwrap(), vec![1.0]);
        assert_eq!(transition_distribution(&[q(0, 0, 1, 4), q(0, 1, 1, 4)], 6).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn transition_errors() {
        assert!(matches!(transition_distribution(&[], 3), Err(MiningError::EmptyCandidates)));
        assert!(matches!(
            transition_distribution(&[q(0, 0, 1, 1), q(0, 0, 1, 3)], 3),
            Err(MiningError::NotInPast { candidate: 3, t: 3 })
        ));
    }

    #[test]
    fn transition_far_in_the_past_does_not_underflow_to_nan() {
        let p = transition_distribution(&[q(0, 0, 1, 0), q(0, 0, 1, 5000)], 5001).unwrap();
        assert_eq!(p[1], 1.0);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn walk_single_candidate() {
        let kg = graph(2, &["rh", "rb"], false, &[q(0, 0, 1, 5), q(1, 1, 0, 3)]);
        let mut rng = stream(&[1]);
        for _ in 0..20 {
            assert_eq!(sample_walk(&kg, &q(0, 0, 1, 5), &mut rng).unwrap(), Some(1));
        }
    }

    #[test]
    fn walk_without_candidates() {
        let kg = graph(2, &["rh"], false, &[q(0, 0, 1, 5)]);
        assert_eq!(sample_walk(&kg, &q(0, 0, 1, 5), &mut stream(&[1])).unwrap(), None);
    }

    #[test]
    fn walk_rejects_foreign_head() {
        let kg = graph(2, &["rh"], false, &[q(0, 0, 1, 5)]);
        assert!(matches!(
            sample_walk(&kg, &q(0, 0, 1, 6), &mut stream(&[1])),
            Err(MiningError::HeadNotInGraph(_))
        ));
    }

    #[test]
    fn walk_frequencies_follow_exponential_weights() {
        let kg = graph(2, &["rh", "rb1", "rb2"], false, &[q(0, 0, 1, 5), q(1, 1, 0, 4), q(1, 2, 0, 1)]);
        let mut rng = stream(&[42]);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_walk(&kg, &q(0, 0, 1, 5), &mut rng).unwrap() == Some(1))
            .count();
        let freq = hits as f64 / n as f64;
        // exp(-1) / (exp(-1) + exp(-4))
        assert!((freq - 0.952_574_126_822_433_2).abs() < 0.01, "{freq}");
    }

    #[test]
    fn confidence_by_enumeration() {
        // A rb B @1, A rh B @2, C rb D @1
        let kg = graph(4, &["rb", "rh"], false, &[q(0, 0, 1, 1), q(0, 1, 1, 2), q(2, 0, 3, 1)]);
        let est = estimate_confidence(&kg, 1, 0, 100, &mut stream(&[0])).unwrap().unwrap();
        assert_eq!((est.body_support, est.rule_support, est.confidence), (2, 1, 0.5));
    }

    #[test]
    fn confidence_one_when_head_always_follows() {
        let kg = graph(4, &["rb", "rh"], false, &[q(0, 0, 1, 1), q(0, 1, 1, 2), q(2, 0, 3, 1), q(2, 1, 3, 9)]);
        let est = estimate_confidence(&kg, 1, 0, 100, &mut stream(&[0])).unwrap().unwrap();
        assert_eq!(est.confidence, 1.0);
    }

    #[test]
    fn head_before_body_has_no_support() {
        let kg = graph(2, &["rb", "rh"], false, &[q(0, 0, 1, 5), q(0, 1, 1, 5), q(0, 1, 1, 2)]);
        let est = estimate_confidence(&kg, 1, 0, 100, &mut stream(&[0])).unwrap().unwrap();
        assert_eq!(est.rule_support, 0);
        let bank = learn_rules(&kg, &MiningParams { min_body_support: 1, ..Default::default() }).unwrap();
        assert!(bank.rules_for(1).iter().all(|r| r.body != 0));
    }

    #[test]
    fn empty_body_yields_none_and_zero_cap_errors() {
        let kg = graph(2, &["rb", "rh"], false, &[q(0, 1, 1, 5)]);
        assert!(estimate_confidence(&kg, 1, 0, 10, &mut stream(&[0])).unwrap().is_none());
        assert!(estimate_confidence(&kg, 1, 0, 0, &mut stream(&[0])).is_err());
    }

    #[test]
    fn capped_estimate_reports_cap() {
        let edges: Vec<_> = (0..50).map(|t| q(0, 0, 1, t)).chain([q(0, 1, 1, 25)]).collect();
        let kg = graph(2, &["rb", "rh"], false, &edges);
        let est = estimate_confidence(&kg, 1, 0, 10, &mut stream(&[3])).unwrap().unwrap();
        assert_eq!(est.body_support, 10);
        assert!(est.rule_support <= 10);
    }

    #[test]
    fn rejects_longer_rules() {
        let kg = graph(2, &["r"], false, &[q(0, 0, 1, 1)]);
        let params = MiningParams { rule_length: 2, ..Default::default() };
        assert!(matches!(learn_rules(&kg, &params), Err(MiningError::InvalidParams(_))));
    }

    #[test]
    fn single_relation_without_cycles_gives_empty_bank() {
        let kg = graph(3, &["r"], false, &[q(0, 0, 1, 1), q(1, 0, 2, 2), q(0, 0, 2, 3)]);
        assert!(learn_rules(&kg, &MiningParams::default()).unwrap().is_empty());
    }

    #[test]
    fn learns_repetition_and_body_with_inverse_edges() {
        // A rb B @1, A rh B @2, A rh B @4, C rb D @2, C rh D @3
        let kg = graph(
            4,
            &["rb", "rh"],
            true,
            &[q(0, 0, 1, 1), q(0, 1, 1, 2), q(0, 1, 1, 4), q(2, 0, 3, 2), q(2, 1, 3, 3)],
        );
        let bank = learn_rules(&kg, &MiningParams::default()).unwrap();
        let conf = bank.confidence(1, 0).expect("rh <- rb");
        assert_eq!(conf, 1.0);
        // rh <- rh: groundings at 2, 4, 3; only the one at 2 is followed
        let rep = bank.rules_for(1).iter().find(|r| r.body == 1).unwrap();
        assert_eq!((rep.body_support, rep.rule_support), (3, 1));
    }

    #[test]
    fn bank_order_ties() {
        let mk = |body, bs, rs| TemporalRule {
            head: 0,
            body,
            body_support: bs,
            rule_support: rs,
            confidence: rs as f64 / bs as f64,
        };
        let bank =
            RuleBank::from_rules(MiningParams::default(), [mk(3, 4, 2), mk(1, 2, 1), mk(2, 4, 2), mk(5, 10, 9)])
                .unwrap();
        let bodies: Vec<_> = bank.rules_for(0).iter().map(|r| r.body).collect();
        assert_eq!(bodies, vec![5, 2, 3, 1]);
    }

    #[test]
    fn bank_rejects_bad_rules() {
        let bad = TemporalRule { head: 0, body: 1, body_support: 2, rule_support: 1, confidence: 0.7 };
        assert!(RuleBank::from_rules(MiningParams::default(), [bad]).is_err());
        let dup = TemporalRule { head: 0, body: 1, body_support: 2, rule_support: 1, confidence: 0.5 };
        assert!(RuleBank::from_rules(MiningParams::default(), [dup, dup]).is_err());
        let over = TemporalRule { head: 0, body: 1, body_support: 2, rule_support: 3, confidence: 1.5 };
        assert!(RuleBank::from_rules(MiningParams::default(), [over]).is_err());
    }

    #[test]
    fn bank_json_round_trip_and_order_check() {
        let mk = |body, rs| TemporalRule { head: 2, body, body_support: 4, rule_support: rs, confidence: rs as f64 / 4.0 };
        let bank = RuleBank::from_rules(MiningParams::default(), [mk(0, 1), mk(1, 3)]).unwrap();
        let text = bank.to_json();
        assert_eq!(RuleBank::from_json(&text).unwrap(), bank);
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["rules"].as_array_mut().unwrap().reverse();
        assert!(matches!(RuleBank::from_json(&doc.to_string()), Err(BankError::Invalid(_))));
    }

    #[test]
    fn reference_matches_direct_formula() {
        let times = [3, 5];
        let r = reference(&times, 6);
        let p = transition_distribution(&[q(0, 0, 1, 3), q(0, 0, 1, 5)], 6).unwrap();
        for (a, b) in r.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sums_to_one_and_shift_invariant(
                offsets in proptest::collection::vec(1u32..60, 1..50),
                t in 60u32..200,
                shift in 0u32..100_000,
            ) {
                let cands: Vec<Quadruple> = offsets.iter().map(|&d| q(0, 0, 1, t - d)).collect();
                let p = transition_distribution(&cands, t).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                let shifted: Vec<Quadruple> = cands.iter().map(|c| q(0, 0, 1, c.t + shift)).collect();
                prop_assert_eq!(transition_distribution(&shifted, t + shift).unwrap(), p.clone());
                let times: Vec<u32> = cands.iter().map(|c| c.t).collect();
                for (a, b) in reference(&times, t).iter().zip(&p) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
