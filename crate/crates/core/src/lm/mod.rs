//! Tiny causal transformer language model: vocabulary, forward pass with a
//! soft-prompt injection point, and corpus pre-training.

mod model;
mod pretrain;
mod vocab;

pub use model::{cross_entropy_rows, CausalLM, LmCache, LmConfig, CHECKPOINT_KIND};
pub use pretrain::{corpus_loss, pretrain, LmTrainConfig, TrainReport};
pub(crate) use pretrain::apply as apply_update;
pub use vocab::{split_words, TokenSeq, Vocab, BOS, PAD, UNK};
