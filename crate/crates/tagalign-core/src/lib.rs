//! Tag-anchored video-text retrieval at desk scale.
//!
//! A self-contained training and evaluation stack: a tensor graph with
//! reverse-mode autodiff, a procedurally generated video/caption corpus with
//! multi-modal tags, transformer encoders fused through a tag-guiding
//! cross-modal encoder, contrastive + matching + masked-language objectives,
//! and retrieval metrics with dual-softmax score revision and attention
//! rollout.

pub mod datagen;
pub mod encoders;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod seeding;
pub mod tagging;
pub mod trainer;
