//! Relation-extraction toolkit core: data model, dataset ingestion,
//! instruction construction, answer parsing, label alignment and scoring.

pub mod align;
pub mod eval;
pub mod ingest;
pub mod instruct;
pub mod model;
pub mod parser;

pub use align::{align, default_scorer, validate, AlignmentResult, CharNgramScorer, SimilarityScorer};
pub use eval::{aggregate, classify_error, compare_runs, score_instance, EvalReport, PredictionRecord};
pub use ingest::{load_split, sample_fraction, DatasetManifest, Fraction};
pub use instruct::{build_dataset, build_example, mark_entities, Ablation, BuildConfig, InstructionExample};
pub use model::{Entity, REInstance, RelationSet, RelationTriplet, Sentence, Span};
pub use parser::{parse, render, ParseConfig, ParseMode, ParseOutcome};

/// Crate version, recorded in report files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
