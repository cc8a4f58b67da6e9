//! Engine for detecting adverse drug events in clinical free text.
//!
//! The pipeline has two stages: a sequence tagger locates drug and disorder
//! mentions (BIO labels, linear-chain CRF decoding), and a feed-forward
//! relation classifier scores candidate drug–disorder pairs as adverse drug
//! events or prescribing indications. The [`metrics`] module implements the
//! full measurement protocol: strict/lenient span matching, micro/macro
//! F-beta, precision-recall curves with F1/F2 threshold selection, ADE-group
//! and document-level evaluation, and cross-validation aggregation.
//!
//! Token representations come from either a static word-vector table (the
//! Bi-LSTM path) or a precomputed contextual-embedding archive (the
//! transformer path); see [`embed`].

pub mod balance;
pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod pairs;
pub mod relclass;
pub mod synth;
pub mod tagger;
