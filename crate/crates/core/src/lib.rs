//! Rule-guided history retrieval for generative forecasting on temporal
//! knowledge graphs.
//!
//! The pipeline has six stages, each in its own module:
//!
//! * [`kg`] loads quadruple datasets into an immutable, time-indexed store.
//! * [`rules`] mines length-1 cyclic temporal rules with backward random walks.
//! * [`retrieve`] collects the facts a query's rules point at.
//! * [`prompt`] renders histories as text prompts and fine-tuning samples.
//! * [`llm`] talks to a completion endpoint and parses generations; it also
//!   ships a deterministic rule-score predictor that needs no model.
//! * [`eval`] computes time-aware filtered Hits@k and runs ablation grids.
//!
//! The guide under `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod eval;
pub mod kg;
pub mod llm;
pub mod prompt;
pub mod retrieve;
pub mod rules;
pub mod synthetic;
mod util;

pub use kg::{load_dataset, Dataset, DatasetSpec, EntityId, Quadruple, RelationId, Split, TemporalKg, Time, Vocabulary};
pub use retrieve::{retrieve, Query, RetrievalConfig, RetrievedHistory};
pub use rules::{learn_rules, MiningParams, RuleBank, TemporalRule};
pub use util::fingerprint;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/rules.md")]
    mod rules {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/predictions.md")]
    mod predictions {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
