//! Manifests, tokenization, caption sampling, multi-crop views and
//! translation prompts.

pub mod augment;
pub mod image;
pub mod language;
pub mod manifest;
pub mod prompts;
pub mod sampling;
pub mod tokenizer;

pub use augment::{make_views, AugmentationConfig, ViewBundle, ViewStream};
pub use language::Language;
pub use manifest::{load_manifest, CaptionRecord, ImageCaptionRecord, ImageRef, Split};
pub use sampling::{sample_caption, EpochSamplingPolicy, SamplingMode};
pub use tokenizer::tokenize;
