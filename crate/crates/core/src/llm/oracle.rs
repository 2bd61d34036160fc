use std::cmp::Reverse;

use rustc_hash::FxHashMap;

use super::{ClientError, PredictRequest, PredictionList, Predictor, MAX_PREDICTIONS};
use crate::kg::{EntityId, Time};
use crate::retrieve::{Query, RetrievedHistory};
use crate::rules::RuleBank;

/// Ranks the objects of a history by accumulated rule evidence.
///
/// Each fact `(s, r', o, t')` adds to `o` the confidence of the rule
/// `query.relation <- r'` if the bank has it, plus 1 when `r'` is the query
/// relation itself. Ties go to the object with the most recent supporting
/// fact, then the lower id.
pub fn rule_score_predict(history: &RetrievedHistory, bank: &RuleBank, query: &Query) -> PredictionList {
    let mut scores: FxHashMap<EntityId, (f64, Time)> = FxHashMap::default();
    for fact in history.quadruples() {
        let mut w = bank.confidence(query.relation, fact.relation).unwrap_or(0.0);
        if fact.relation == query.relation {
            w += 1.0;
        }
        if w > 0.0 {
            let entry = scores.entry(fact.object).or_insert((0.0, fact.t));
            entry.0 += w;
            entry.1 = entry.1.max(fact.t);
        }
    }
    let mut ranked: Vec<(EntityId, f64, Time)> = scores.into_iter().map(|(e, (s, t))| (e, s, t)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(Reverse(a.2).cmp(&Reverse(b.2))).then(a.0.cmp(&b.0)));
    ranked.truncate(MAX_PREDICTIONS);
    PredictionList::from_ranked(ranked.into_iter().map(|(e, _, _)| e).collect())
}

/// [`rule_score_predict`] as a [`Predictor`].
pub struct RuleScorePredictor<'a> {
    bank: &'a RuleBank,
}

impl<'a> RuleScorePredictor<'a> {
    pub fn new(bank: &'a RuleBank) -> Self {
        Self { bank }
    }
}

impl Predictor for RuleScorePredictor<'_> {
    fn id(&self) -> String {
        format!("rule-score:{}", crate::util::fingerprint(self.bank.params()))
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<PredictionList, ClientError>> {
        use rayon::prelude::*;
        requests
            .par_iter()
            .map(|r| Ok(rule_score_predict(r.history, self.bank, &r.history.query)))
            .collect()
    }
}
