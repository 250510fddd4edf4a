//! Next-token pre-training on the synthetic corpus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{cross_entropy_rows, CausalLM};
use super::vocab::{TokenSeq, BOS};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};
use crate::optim::{OptimConfig, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            seed: 0,
            optim: OptimConfig::default(),
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.optim.lr >= 0.0) || !(self.optim.lr.is_finite()) {
            return Err(Error::InvalidConfig("batch size must be positive and lr finite, non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token loss before any update.
    pub initial_loss: f64,
    /// Mean per-token training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// `[BOS] + tokens`, truncated to the context window.
fn training_sequences(model: &CausalLM, corpus: &[String]) -> Vec<TokenSeq> {
    corpus
        .iter()
        .filter_map(|line| {
            let mut ids = vec![BOS];
            ids.extend(model.vocab.tokenize(line).iter());
            ids.truncate(model.n_ctx() + 1);
            (ids.len() >= 2).then_some(TokenSeq(ids))
        })
        .collect()
}

/// Summed next-token loss of one sequence, optionally with gradients.
fn sequence_loss(model: &CausalLM, seq: &[usize], scale: f64, grads: Option<&mut CausalLM>) -> Result<f64> {
    let inputs = &seq[..seq.len() - 1];
    let targets = &seq[1..];
    let emb = model.embed_tokens(inputs)?;
    let positions: Vec<usize> = (0..inputs.len()).collect();
    let (logits, cache) = model.forward_at(&emb, &positions)?;
    let (loss, dl) = cross_entropy_rows(&logits, targets, scale);
    if let Some(g) = grads {
        let demb = model.backward(&cache, &dl, Some(&mut *g));
        for (k, &id) in inputs.iter().enumerate() {
            axpy(1.0, demb.row(k), g.tok_emb.row_mut(id));
        }
    }
    Ok(loss)
}

/// Mean per-token next-token cross-entropy of the model over a corpus.
pub fn corpus_loss(model: &CausalLM, corpus: &[String]) -> Result<f64> {
    let seqs = training_sequences(model, corpus);
    let mut total = 0.0;
    let mut count = 0usize;
    for s in &seqs {
        total += sequence_loss(model, s, 1.0, None)?;
        count += s.len() - 1;
    }
    if count == 0 {
        return Err(Error::Empty("corpus yields no training tokens".into()));
    }
    Ok(total / count as f64)
}

pub fn pretrain(model: &mut CausalLM, corpus: &[String], config: &LmTrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let seqs = training_sequences(model, corpus);
    if seqs.is_empty() {
        return Err(Error::Empty("corpus yields no training tokens".into()));
    }
    let initial_loss = corpus_loss(model, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optim);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let tokens: usize = batch.iter().map(|&i| seqs[i].len() - 1).sum();
            let scale = 1.0 / tokens as f64;
            let mut grads = model.zeros_like();
            for &i in batch {
                epoch_loss += sequence_loss(model, &seqs[i], scale, Some(&mut grads))?;
            }
            epoch_tokens += tokens;
            apply(&mut opt, model, &grads);
        }
        let mean = epoch_loss / epoch_tokens as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("pretraining epoch {epoch}")));
        }
        log::info!("pretrain epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
    })
}

pub(crate) fn apply(opt: &mut Optimizer, model: &mut CausalLM, grads: &CausalLM) {
    let g: Vec<&Mat> = grads.tensors().into_iter().map(|(_, m)| m).collect();
    let p: Vec<&mut Mat> = model.tensors_mut().into_iter().map(|(_, m)| m).collect();
    opt.step(p, g);
}
