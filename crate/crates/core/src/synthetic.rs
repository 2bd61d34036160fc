//! Seeded synthetic datasets for tests, benchmarks and offline demos.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Dataset, DatasetSpec, EntityId, Quadruple, Time, Vocabulary};
use crate::util::stream;

pub const BODY: u32 = 0;
pub const HEAD: u32 = 1;

/// A graph with one planted implication: a `body` event between a subject
/// and an object is followed one step later by a `head` event between the
/// same pair with probability `p_follow`.
///
/// Subjects `0..n_subjects` only ever link to objects
/// `n_subjects..2*n_subjects`; each subject has a favourite object it picks
/// with probability `p_favourite`. The remaining entity pairs carry one
/// event each on a noise relation, so noise never co-occurs with anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_entities: u32,
    pub n_subjects: u32,
    /// Total relations; all but `body` and `head` are noise.
    pub n_relations: u32,
    pub n_body_events: usize,
    pub p_follow: f64,
    pub p_favourite: f64,
    pub n_steps: Time,
    pub inverse: bool,
    pub seed: u64,
    /// Share of the time steps held out for validation, after training.
    pub valid_fraction: f64,
    /// Share of the time steps held out for testing, at the end.
    pub test_fraction: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_entities: 20,
            n_subjects: 5,
            n_relations: 5,
            n_body_events: 2000,
            p_follow: 0.8,
            p_favourite: 0.6,
            n_steps: 500,
            inverse: true,
            seed: 0,
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_relations < 3 {
            return Err("need at least one noise relation".into());
        }
        if 2 * self.n_subjects > self.n_entities || self.n_subjects == 0 {
            return Err("n_subjects must be in 1..=n_entities/2".into());
        }
        if self.n_steps < 10 {
            return Err("n_steps must be at least 10".into());
        }
        if !(0.0..=1.0).contains(&self.p_follow) || !(0.0..=1.0).contains(&self.p_favourite) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        let held_out = self.valid_fraction + self.test_fraction;
        if self.valid_fraction < 0.0 || self.test_fraction < 0.0 || !(held_out < 1.0) {
            return Err("valid_fraction and test_fraction must be non-negative and sum below 1".into());
        }
        // Body events are distinct, so the busiest (favourite) pair needs room.
        let k = self.n_subjects as f64;
        let busiest = self.n_body_events as f64 / k * (self.p_favourite + (1.0 - self.p_favourite) / k);
        if busiest > 0.8 * (self.n_steps - 1) as f64 {
            return Err(format!("{} body events do not fit in {} steps", self.n_body_events, self.n_steps));
        }
        Ok(())
    }
}

/// All edges of a planted graph, sorted, before splitting.
///
/// Body events are distinct. Panics if the configuration is invalid; see
/// [`planted`].
pub fn planted_edges(cfg: &PlantedConfig) -> Vec<Quadruple> {
    if let Err(e) = cfg.validate() {
        panic!("invalid planted config: {e}");
    }
    let mut rng = stream(&[cfg.seed, 0x504c_414e]);
    let k = cfg.n_subjects;
    let favourite: Vec<EntityId> = (0..k).map(|_| rng.random_range(k..2 * k)).collect();
    let mut edges = Vec::with_capacity(cfg.n_body_events * 2 + 200);
    let mut taken = HashSet::with_capacity(cfg.n_body_events);
    while taken.len() < cfg.n_body_events {
        let s = rng.random_range(0..k);
        let o = if rng.random_bool(cfg.p_favourite) { favourite[s as usize] } else { rng.random_range(k..2 * k) };
        let t = rng.random_range(0..cfg.n_steps - 1);
        if !taken.insert((s, o, t)) {
            continue;
        }
        edges.push(Quadruple::new(s, BODY, o, t));
        if rng.random_bool(cfg.p_follow) {
            edges.push(Quadruple::new(s, HEAD, o, t + 1));
        }
    }
    let planted = |a: u32, b: u32| a < k && (k..2 * k).contains(&b);
    let mut pairs: Vec<(u32, u32)> = (0..cfg.n_entities)
        .flat_map(|a| (a + 1..cfg.n_entities).map(move |b| (a, b)))
        .filter(|&(a, b)| !planted(a, b) && !planted(b, a))
        .collect();
    pairs.shuffle(&mut rng);
    let noise = cfg.n_relations - 2;
    for (i, (a, b)) in pairs.into_iter().enumerate() {
        let (s, o) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let r = 2 + i as u32 % noise;
        edges.push(Quadruple::new(s, r, o, rng.random_range(0..cfg.n_steps)));
    }
    edges.sort_by_key(Quadruple::sort_key);
    edges.dedup();
    edges
}

fn planted_vocab(cfg: &PlantedConfig) -> Vocabulary {
    let rels = ["body".to_string(), "head".to_string()]
        .into_iter()
        .chain((0..cfg.n_relations - 2).map(|i| format!("noise_{i}")));
    Vocabulary::from_names((0..cfg.n_entities).map(|e| format!("E{e}")), rels, cfg.inverse)
}

/// Planted graph split by time: training steps first, then validation, then
/// test (10% each by default).
pub fn planted(cfg: &PlantedConfig) -> Result<Dataset, String> {
    cfg.validate()?;
    let edges = planted_edges(cfg);
    let steps = cfg.n_steps as f64;
    let t_valid = (steps * (1.0 - cfg.test_fraction)).round() as Time;
    let t_train = (steps * (1.0 - cfg.test_fraction - cfg.valid_fraction)).round() as Time;
    split_by_time(planted_vocab(cfg), cfg.inverse, edges, t_train, t_valid)
}

fn split_by_time(
    vocab: Vocabulary,
    inverse: bool,
    edges: Vec<Quadruple>,
    t_train: Time,
    t_valid: Time,
) -> Result<Dataset, String> {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for q in edges {
        match q.t {
            t if t < t_train => train.push(q),
            t if t < t_valid => valid.push(q),
            _ => test.push(q),
        }
    }
    let spec = DatasetSpec { inverse, ..DatasetSpec::default() };
    Dataset::from_splits(Arc::new(vocab), spec, 0, train, valid, test).map_err(|e| e.to_string())
}

/// A large event graph shaped like the ICEWS14 benchmark, for timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventGraphConfig {
    pub n_entities: u32,
    pub n_relations: u32,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_steps: Time,
    /// Chance that an event re-links a recently active pair.
    pub p_echo: f64,
    pub seed: u64,
}

impl Default for EventGraphConfig {
    fn default() -> Self {
        Self {
            n_entities: 7128,
            n_relations: 230,
            n_train: 74_854,
            n_valid: 8514,
            n_test: 7371,
            n_steps: 365,
            p_echo: 0.5,
            seed: 0,
        }
    }
}

/// Heavy-tailed pick from `0..n`; low ids are popular.
fn skewed<R: Rng>(rng: &mut R, n: u32) -> u32 {
    let u: f64 = rng.random();
    ((n as f64 * u.powi(3)) as u32).min(n - 1)
}

/// Event graph with popularity skew and repeated pairs, so that temporal
/// walks find cycles. Steps are allocated to splits in proportion to the
/// requested sizes; events are distinct, so split sizes are met exactly.
pub fn event_graph(cfg: &EventGraphConfig) -> Result<Dataset, String> {
    if cfg.n_entities < 2 || cfg.n_relations == 0 || cfg.n_steps < 3 {
        return Err("event graph needs at least 2 entities, 1 relation and 3 steps".into());
    }
    let mut rng = stream(&[cfg.seed, 0x4556_454e]);
    let total = cfg.n_train + cfg.n_valid + cfg.n_test;
    let mut recent: Vec<(u32, u32)> = Vec::with_capacity(4096);
    let mut edges = Vec::with_capacity(total);
    let mut seen = HashSet::with_capacity(total);
    for i in 0..total {
        let t = (i as u64 * cfg.n_steps as u64 / total as u64) as Time;
        let mut attempts = 0;
        let q = loop {
            let (s, o) = match recent.len() {
                n if n > 0 && rng.random_bool(cfg.p_echo) => {
                    let (s, o) = recent[rng.random_range(0..n)];
                    if rng.random_bool(0.5) { (s, o) } else { (o, s) }
                }
                _ => {
                    let s = skewed(&mut rng, cfg.n_entities);
                    let mut o = rng.random_range(0..cfg.n_entities);
                    if o == s {
                        o = (o + 1) % cfg.n_entities;
                    }
                    (s, o)
                }
            };
            let q = Quadruple::new(s, skewed(&mut rng, cfg.n_relations), o, t);
            if seen.insert(q) {
                break q;
            }
            attempts += 1;
            if attempts == 10_000 {
                return Err(format!("cannot place {total} distinct events in {} steps", cfg.n_steps));
            }
        };
        if recent.len() < 4096 {
            recent.push((q.subject, q.object));
        } else {
            let slot = rng.random_range(0..recent.len());
            recent[slot] = (q.subject, q.object);
        }
        edges.push(q);
    }
    let test = edges.split_off(cfg.n_train + cfg.n_valid);
    let valid = edges.split_off(cfg.n_train);
    let vocab = Vocabulary::from_names(
        (0..cfg.n_entities).map(|e| format!("Actor {e}")),
        (0..cfg.n_relations).map(|r| format!("Event type {r}")),
        true,
    );
    Dataset::from_splits(Arc::new(vocab), DatasetSpec::default(), 0, edges, valid, test).map_err(|e| e.to_string())
}
