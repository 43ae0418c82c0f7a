//! Tweet normalization and subword tokenization.

mod bpe;
mod normalize;

pub use bpe::{
    train_bpe, BpeDocument, BpeModel, BOS_ID, END_OF_WORD, EOS_ID, PAD_ID, UNK_ID,
};
pub use normalize::{normalize_tweet, NormalizeOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextprocError {
    #[error("vocab size {requested} too small; need more than {minimum} to learn any merge")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("invalid tokenizer document: {0}")]
    Format(String),
    #[error("invalid normalize options: {0}")]
    InvalidOptions(String),
}

/// Normalization plus tokenization: raw tweet in, padded-free id sequence out.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPipeline {
    pub normalize: NormalizeOptions,
    pub tokenizer: BpeModel,
}

impl TextPipeline {
    pub fn new(normalize: NormalizeOptions, tokenizer: BpeModel) -> Self {
        TextPipeline {
            normalize,
            tokenizer,
        }
    }

    pub fn encode(&self, raw: &str, max_len: usize) -> Vec<u32> {
        self.tokenizer
            .encode(&normalize_tweet(raw, &self.normalize), max_len)
    }
}
