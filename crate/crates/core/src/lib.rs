//! Task-aware metric local differential privacy for text.
//!
//! Tokens are split into four public groups by privacy sensitivity and task
//! importance, each group gets its own budget, and every token embedding is
//! perturbed independently (direction-only vMF by default) and decoded back
//! to the vocabulary by cosine nearest neighbour. Each document comes with a
//! receipt of the per-token budgets actually spent.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common `f64` instantiation.

pub mod bench;
pub mod budget;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod grouping;
pub mod mechanism;
pub mod pipeline;
pub mod scalar;
pub mod sphere;

pub use budget::{allocate, build_receipt, matched_uniform_budget, AllocationStrategy, BudgetVector, PrivacyReceipt};
pub use decoder::{decode, decode_batch, AnnBackend, DecodeResult, DecodeRule, ExactBackend};
pub use embedding::{load_text_embeddings, EmbeddingStore, LoadOptions};
pub use error::{Error, Result};
pub use grouping::{
    assign_groups, GroupLabel, Gazetteers, ImportanceConfig, PrecomputedSpans, RuleBasedDetector, SensitivityOracle,
    Span,
};
pub use mechanism::{Guarantee, MechanismConfig, MechanismKind, Metric, PrivatizedVector};
pub use pipeline::{
    evaluate_run, privatize_corpus, privatize_document, tokenize, Document, Framework, OovPolicy, PrivatizedContext,
    RunConfig, UtilityReport,
};
pub use scalar::Real;
pub use sphere::{Concentration, RandomSource, UnitVector};

pub type EmbeddingStoreF64 = EmbeddingStore<f64>;
pub type EmbeddingStoreF32 = EmbeddingStore<f32>;
pub type UnitVectorF64 = UnitVector<f64>;
pub type UnitVectorF32 = UnitVector<f32>;
pub type PrivatizedVectorF64 = PrivatizedVector<f64>;
pub type PrivatizedVectorF32 = PrivatizedVector<f32>;
pub type ImportanceConfigF64 = ImportanceConfig<f64>;
