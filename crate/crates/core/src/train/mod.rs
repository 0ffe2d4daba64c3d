//! Contrastive fine-tuning of the dense encoder.

pub mod loss;
pub mod paraphrase;
pub mod trainer;
pub mod triplet;
