//! Semantic tensor priors for visual relationship detection.
//!
//! A factorization model scores `(subject, predicate, object)` triples from
//! training counts; its exponentiated scores act as a prior that is fused
//! with per-region detector outputs by Bayes rule. A conditional model
//! predicts the predicate directly from a region feature. Both pipelines are
//! scored under the four recall settings in [`evaluation`].

// index loops mirror the tensor formulas
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod conditional;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod math;
pub mod params;
pub mod prior;
pub mod records;
pub mod semantic;
pub mod synth;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use conditional::{
    predict_pair, train_conditional, ConditionalExample, ConditionalModel, ConditionalShape,
    ConditionalTrainConfig,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate, Averaging, EvalOptions, EvalReport, GroundTruthTriple, ImageRecord, Task,
};
pub use fusion::{fuse_pair, BayesFusion, BoundingBox, Marginals, RelationPredictor, VisualOnly};
pub use params::{OptimizerKind, Parameterized};
pub use prior::{train_prior, Enumeration, PriorTensor, PriorTrainConfig, TrainingLog};
pub use semantic::{ModelShape, SemanticModel, Variant};
pub use synth::{generate, SynthConfig, SynthCorpus};
pub use vocab::{Triple, TripleCounts, Vocabulary};
