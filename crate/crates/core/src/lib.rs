//! Objective evaluation of spoken dialogue systems from user behavior.
//!
//! The pipeline: load a time-aligned, token-annotated [`corpus`], segment each
//! dialogue into inter-pausal units ([`ipu`]), compute eleven per-minute user
//! behavior [`features`], regress subjective scores on them with boosted trees
//! ([`gbt`]), explain the model with exact Shapley values ([`shapley`]) and
//! measure leave-one-out error ([`eval`]). [`synth`] produces corpora with a
//! known ground truth and [`report`] writes the tabular outputs.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod io;
pub mod ipu;
pub mod report;
pub mod shapley;
pub mod synth;

pub use corpus::{aggregate_score, load_corpus, save_corpus, Corpus, Dialogue};
pub use error::{Error, Result};
pub use eval::{loocv, score_histogram, LoocvResult};
pub use features::{extract_features, feature_matrix, ExtractOptions, Feature, FeatureTable, FeatureVector};
pub use gbt::{fit, GbtConfig, GbtModel};
pub use ipu::{floor_transitions, segment_ipus, IpuTimeline};
pub use shapley::{shap_matrix, summarize, Attribution, ShapSummary};
pub use synth::{generate, TaskProfile};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
