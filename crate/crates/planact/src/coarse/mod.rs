//! Coarse inference: instruction + depth + tactile -> next skill sentence.
//!
//! A pretrained-then-frozen seq2seq backbone and a frozen conv image encoder
//! carry all language/vision knowledge; the only trainable pieces afterwards
//! are ten soft prompts (through a small feed-forward reparameterization),
//! two tactile embedding rows and one linear image adapter.

pub mod image;
pub mod model;
pub mod pretrain;
pub mod tune;
pub mod vocab;

pub use image::{pretrain_image_encoder, ImageEncoder, ImagePretrainConfig};
pub use model::{
    load_coarse, save_coarse, untrained, CoarseModel, CoarseState, SoftPromptParams, NUM_PROMPTS,
};
pub use pretrain::{pretrain_backbone, PretrainConfig};
pub use tune::{examples_from_records, plan_examples, tune_prompts, TuneConfig, TuneExample};
pub use vocab::Vocabulary;
