//! Task-enlightenment prompt learning for implicit discourse relation
//! recognition.
//!
//! The crate builds a three-part cloze prompt over an argument pair, scores
//! it with a masked language model, fuses the two auxiliary task features
//! into the main relation-recognition head through sigmoid gates, and trains
//! the whole stack jointly. Everything numeric is generic over [`Float`];
//! concrete f32/f64 aliases live at the crate root.

pub mod ablation;
pub mod backbone;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod float;
pub mod fusion;
pub mod math;
pub mod model;
pub mod rng;
pub mod template;
pub mod train;
pub mod verbalizer;

pub use error::{Error, Result};
pub use float::Float;

pub use backbone::{Backbone, ToyBackboneConfig, TransformerBackbone};
pub use corpus::{CorpusFormat, CorpusSplit, DiscourseInstance, Sense};
pub use eval::{AblationVariant, EvaluationReport};
pub use fusion::FusionParameters;
pub use model::PromptModel;
pub use template::TemplateConfig;
pub use train::TrainingConfig;

/// f32 instantiations: the fast default for training runs.
pub type BackboneF32 = backbone::TransformerBackbone<f32>;
pub type FusionParametersF32 = fusion::FusionParameters<f32>;
pub type PromptModelF32 = model::PromptModel<f32>;
pub type MatrixF32 = math::Matrix<f32>;

/// f64 instantiations: used where tight numeric tolerances matter.
pub type BackboneF64 = backbone::TransformerBackbone<f64>;
pub type FusionParametersF64 = fusion::FusionParameters<f64>;
pub type PromptModelF64 = model::PromptModel<f64>;
pub type MatrixF64 = math::Matrix<f64>;
