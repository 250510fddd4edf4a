//! Continuous prompt training against a frozen language model, plus the
//! zero-shot and full fine-tuning modes it is compared with.

use std::path::Path;

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, InteractionTriplet};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};
use crate::lm::{cross_entropy_rows, CausalLM, TokenSeq, Vocab};
use crate::optim::{OptimConfig, Optimizer};

pub const DEFAULT_TEMPLATE: &str = "query: {q} category:";
pub const DEFAULT_PROMPT_LEN: usize = 8;
pub const PROMPT_CHECKPOINT_KIND: &str = "prompt_state";

/// `d` trainable continuous prompt vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub embeddings: Mat,
    pub seed: u64,
}

impl PromptState {
    /// Copies `d` distinct, randomly chosen non-special vocabulary rows.
    pub fn init(model: &CausalLM, d: usize, seed: u64) -> Result<Self> {
        let h = model.hidden();
        let first = 3; // PAD, UNK, BOS
        let available = model.vocab_size().saturating_sub(first);
        if d > available {
            return Err(Error::InvalidConfig(format!(
                "prompt length {d} exceeds the {available} vocabulary rows available for initialization"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = Mat::zeros(d, h);
        for (row, idx) in sample(&mut rng, available, d).into_iter().enumerate() {
            embeddings.row_mut(row).copy_from_slice(model.tok_emb.row(first + idx));
        }
        Ok(Self { embeddings, seed })
    }

    pub fn empty(hidden: usize) -> Self {
        Self {
            embeddings: Mat::zeros(0, hidden),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.embeddings.to_le_bytes()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({"d": self.len(), "hidden": self.embeddings.cols, "seed": self.seed});
        let mut ck = Checkpoint::new(PROMPT_CHECKPOINT_KIND, meta);
        ck.push("prompt", &self.embeddings);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(PROMPT_CHECKPOINT_KIND)?;
        let seed = ck.meta["seed"].as_u64().unwrap_or(0);
        Ok(Self {
            embeddings: ck.get("prompt")?.clone(),
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// How a query is wrapped before the prediction position.
#[derive(Debug, Clone, PartialEq)]
pub enum Prompting {
    /// `[PROMPT_1..d] [query]`; `d = 0` is the bare query.
    Soft(PromptState),
    /// Natural-language template with a `{q}` placeholder.
    Discrete(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    #[default]
    Error,
    /// Drop the oldest query tokens and log a warning.
    TruncateOldest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateAssembly {
    pub embeddings: Mat,
    /// Number of leading soft-prompt rows.
    pub prompt_rows: usize,
    /// Token ids following the soft prompt (wrapped query).
    pub tokens: TokenSeq,
}

fn split_template(template: &str) -> Result<(&str, &str)> {
    template
        .split_once("{q}")
        .ok_or_else(|| Error::InvalidConfig(format!("template {template:?} lacks a {{q}} placeholder")))
}

/// Builds `[PROMPT_1..d] [q] ` (or the discrete-template equivalent), leaving
/// room for `reserve` further positions.
pub fn assemble_template(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    reserve: usize,
    overflow: OverflowPolicy,
) -> Result<TemplateAssembly> {
    let vocab: &Vocab = &model.vocab;
    let (prompt_rows, prefix, mut query, suffix) = match prompting {
        Prompting::Soft(p) => {
            if p.embeddings.cols != model.hidden() {
                return Err(Error::DimensionMismatch(format!(
                    "prompt width {} vs model hidden {}",
                    p.embeddings.cols,
                    model.hidden()
                )));
            }
            (p.len(), Vec::new(), vocab.tokenize(query_text).0, Vec::new())
        }
        Prompting::Discrete(t) => {
            let (pre, post) = split_template(t)?;
            (0, vocab.tokenize(pre).0, vocab.tokenize(query_text).0, vocab.tokenize(post).0)
        }
    };
    let fixed = prompt_rows + prefix.len() + suffix.len() + reserve;
    let n_ctx = model.n_ctx();
    if fixed + query.len() > n_ctx {
        match overflow {
            OverflowPolicy::Error => {
                return Err(Error::ContextOverflow {
                    len: fixed + query.len(),
                    n_ctx,
                })
            }
            OverflowPolicy::TruncateOldest => {
                let keep = n_ctx.saturating_sub(fixed);
                let drop = query.len() - keep;
                log::warn!("query of {} tokens truncated by {drop} to fit the context", query.len());
                query.drain(..drop);
            }
        }
    }
    let mut tokens = prefix;
    tokens.extend(query);
    tokens.extend(suffix);
    let mut embeddings = Mat::zeros(prompt_rows + tokens.len(), model.hidden());
    if let Prompting::Soft(p) = prompting {
        embeddings.data[..p.embeddings.len()].copy_from_slice(&p.embeddings.data);
    }
    let tok = model.embed_tokens(&tokens)?;
    embeddings.data[prompt_rows * model.hidden()..].copy_from_slice(&tok.data);
    Ok(TemplateAssembly {
        embeddings,
        prompt_rows,
        tokens: TokenSeq(tokens),
    })
}

/// Template followed by teacher-forced target tokens `t_1..t_{T-1}`.
pub struct TeacherForced {
    pub embeddings: Mat,
    pub prompt_rows: usize,
    pub input_tokens: Vec<usize>,
    /// Position whose logits predict `target[j]`.
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

pub fn teacher_forced(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    target: &[usize],
    overflow: OverflowPolicy,
) -> Result<TeacherForced> {
    if target.is_empty() {
        return Err(Error::Empty("target token sequence".into()));
    }
    let asm = assemble_template(model, prompting, query_text, target.len() - 1, overflow)?;
    let base = asm.embeddings.rows;
    if base == 0 {
        return Err(Error::Empty("assembled template".into()));
    }
    let extra = model.embed_tokens(&target[..target.len() - 1])?;
    let mut embeddings = asm.embeddings;
    embeddings.rows += extra.rows;
    embeddings.data.extend_from_slice(&extra.data);
    let mut input_tokens = asm.tokens.0;
    input_tokens.extend_from_slice(&target[..target.len() - 1]);
    Ok(TeacherForced {
        embeddings,
        prompt_rows: asm.prompt_rows,
        input_tokens,
        positions: (0..target.len()).map(|j| base - 1 + j).collect(),
        targets: target.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    PTune,
    FineTune,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub mode: TuneMode,
    pub prompt_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub discrete_template: String,
    /// Train on the first category token only instead of all of them.
    pub first_token_only: bool,
    pub overflow: OverflowPolicy,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            mode: TuneMode::PTune,
            prompt_len: DEFAULT_PROMPT_LEN,
            lr: 3e-2,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            discrete_template: DEFAULT_TEMPLATE.to_string(),
            first_token_only: false,
            overflow: OverflowPolicy::Error,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if self.mode == TuneMode::PTune && self.prompt_len == 0 {
            return Err(Error::InvalidConfig("p-tuning needs at least one prompt token".into()));
        }
        split_template(&self.discrete_template)?;
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            ..OptimConfig::default()
        }
    }
}

/// A (query text, category tokens) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneExample {
    pub query: String,
    pub target: TokenSeq,
}

pub fn tune_examples(catalog: &Catalog, triplets: &[InteractionTriplet], vocab: &Vocab) -> Result<Vec<TuneExample>> {
    triplets
        .iter()
        .map(|t| {
            let q = catalog
                .query(&t.query_id)
                .ok_or_else(|| Error::DanglingReference(format!("query {}", t.query_id)))?;
            let c = catalog
                .category(&t.category_id)
                .ok_or_else(|| Error::DanglingReference(format!("category {}", t.category_id)))?;
            let target = vocab.tokenize(&c.name);
            if target.is_empty() {
                return Err(Error::Empty(format!("category {} name has no tokens", c.id)));
            }
            Ok(TuneExample {
                query: q.text.clone(),
                target,
            })
        })
        .collect()
}

/// Summed (or first-token) CE of one example with optional gradients.
fn example_loss(
    model: &CausalLM,
    prompting: &Prompting,
    ex: &TuneExample,
    first_token_only: bool,
    overflow: OverflowPolicy,
    scale: f64,
    grads: Option<&mut CausalLM>,
    prompt_grad: Option<&mut Mat>,
) -> Result<f64> {
    let tf = teacher_forced(model, prompting, &ex.query, &ex.target, overflow)?;
    let take = if first_token_only { 1 } else { tf.targets.len() };
    let (logits, cache) = model.forward_at(&tf.embeddings, &tf.positions[..take])?;
    let (loss, dl) = cross_entropy_rows(&logits, &tf.targets[..take], scale);
    if grads.is_none() && prompt_grad.is_none() {
        return Ok(loss);
    }
    let demb = match grads {
        Some(g) => {
            let d = model.backward(&cache, &dl, Some(&mut *g));
            for (k, &id) in tf.input_tokens.iter().enumerate() {
                axpy(1.0, d.row(tf.prompt_rows + k), g.tok_emb.row_mut(id));
            }
            d
        }
        None => model.backward(&cache, &dl, None),
    };
    if let Some(pg) = prompt_grad {
        for r in 0..tf.prompt_rows {
            axpy(1.0, demb.row(r), pg.row_mut(r));
        }
    }
    Ok(loss)
}

/// Mean over the batch of per-example category-token CE, and its gradient
/// with respect to the prompt embeddings only.
pub fn ptuning_loss(
    model: &CausalLM,
    prompt: &PromptState,
    batch: &[TuneExample],
    first_token_only: bool,
) -> Result<(f64, Mat)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let prompting = Prompting::Soft(prompt.clone());
    let mut grad = prompt.embeddings.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(
            model,
            &prompting,
            ex,
            first_token_only,
            OverflowPolicy::Error,
            scale,
            None,
            Some(&mut grad),
        )?;
    }
    Ok((total * scale, grad))
}

/// Mean loss of a prompting scheme over examples, no gradients.
pub fn mean_loss(model: &CausalLM, prompting: &Prompting, examples: &[TuneExample], first_token_only: bool) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        total += example_loss(model, prompting, ex, first_token_only, OverflowPolicy::TruncateOldest, 1.0, None, None)?;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneLog {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Trains only the prompt rows; the model is borrowed immutably.
pub fn train_prompt(
    model: &CausalLM,
    prompt: PromptState,
    train: &[TuneExample],
    config: &TuneConfig,
) -> Result<(PromptState, TuneLog)> {
    config.validate()?;
    if config.mode != TuneMode::PTune {
        return Err(Error::InvalidConfig("train_prompt requires mode p_tune".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("training examples".into()));
    }
    let mut prompt = prompt;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optim());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TuneLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TuneExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grad) = ptuning_loss(model, &prompt, &batch, config.first_token_only)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("p-tuning epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            opt.step(vec![&mut prompt.embeddings], vec![&grad]);
        }
        let mean = total / train.len() as f64;
        log::info!("p-tune epoch {epoch}: loss {mean:.4}");
        log.epoch_losses.push(mean);
    }
    log.steps = opt.steps_taken();
    Ok((prompt, log))
}

/// Updates every backbone parameter on the discrete-template task.
pub fn finetune(model: &CausalLM, train: &[TuneExample], config: &TuneConfig) -> Result<(CausalLM, TuneLog)> {
    config.validate()?;
    if config.mode != TuneMode::FineTune {
        return Err(Error::InvalidConfig("finetune requires mode fine_tune".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("training examples".into()));
    }
    let mut model = model.clone();
    let prompting = Prompting::Discrete(config.discrete_template.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optim());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TuneLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = model.zeros_like();
            for &i in chunk {
                total += example_loss(
                    &model,
                    &prompting,
                    &train[i],
                    config.first_token_only,
                    config.overflow,
                    scale,
                    Some(&mut grads),
                    None,
                )?;
            }
            crate::lm::apply_update(&mut opt, &mut model, &grads);
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("fine-tuning epoch {epoch}")));
        }
        log::info!("fine-tune epoch {epoch}: loss {mean:.4}");
        log.epoch_losses.push(mean);
    }
    log.steps = opt.steps_taken();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LmConfig, Vocab};

    pub(crate) fn micro() -> CausalLM {
        let vocab = Vocab::build(&["red green blue cyan magenta yellow black white baby product"]).unwrap();
        let cfg = LmConfig {
            layers: 1,
            heads: 1,
            hidden: 4,
            n_ctx: 16,
            mlp_hidden: 8,
        };
        CausalLM::new(vocab, cfg, 3).unwrap()
    }

    fn ex(m: &CausalLM, q: &str, c: &str) -> TuneExample {
        TuneExample {
            query: q.into(),
            target: m.vocab.tokenize(c),
        }
    }

    #[test]
    fn assembly_lengths() {
        let m = micro();
        let p = PromptState::init(&m, 8, 1).unwrap();
        let a = assemble_template(&m, &Prompting::Soft(p), "red green blue cyan white", 0, OverflowPolicy::Error).unwrap();
        assert_eq!(a.embeddings.rows, 13);
        let bare = assemble_template(&m, &Prompting::Soft(PromptState::empty(4)), "red green", 0, OverflowPolicy::Error).unwrap();
        assert_eq!(bare.embeddings, m.embed_tokens(&m.vocab.tokenize("red green")).unwrap());
    }

    #[test]
    fn prompt_rows_come_first() {
        let m = micro();
        let p = PromptState::init(&m, 2, 1).unwrap();
        let a = assemble_template(&m, &Prompting::Soft(p.clone()), "red", 0, OverflowPolicy::Error).unwrap();
        assert_eq!(a.embeddings.row(0), p.embeddings.row(0));
        assert_eq!(a.embeddings.row(1), p.embeddings.row(1));
        assert_eq!(a.embeddings.row(2), m.tok_emb.row(m.vocab.id("red").unwrap()));
    }

    #[test]
    fn overflow_is_an_error_unless_truncating() {
        let m = micro();
        let p = PromptState::init(&m, 8, 1).unwrap();
        let long = vec!["red"; 16].join(" ");
        let err = assemble_template(&m, &Prompting::Soft(p.clone()), &long, 0, OverflowPolicy::Error);
        assert!(matches!(err, Err(Error::ContextOverflow { .. })));
        let ok = assemble_template(&m, &Prompting::Soft(p), &long, 1, OverflowPolicy::TruncateOldest).unwrap();
        assert_eq!(ok.embeddings.rows, 15);
    }

    #[test]
    fn discrete_template_wraps_query() {
        let m = micro();
        let a = assemble_template(&m, &Prompting::Discrete("black {q} white".into()), "red", 0, OverflowPolicy::Error).unwrap();
        assert_eq!(m.vocab.detokenize(&a.tokens), "black red white");
        assert!(assemble_template(&m, &Prompting::Discrete("no slot".into()), "red", 0, OverflowPolicy::Error).is_err());
    }

    #[test]
    fn prompt_init_copies_distinct_vocab_rows() {
        let m = micro();
        let p = PromptState::init(&m, 5, 4).unwrap();
        let mut rows: Vec<usize> = (0..5)
            .map(|r| (3..m.vocab_size()).find(|&v| m.tok_emb.row(v) == p.embeddings.row(r)).unwrap())
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 5);
        assert!(PromptState::init(&m, 500, 4).is_err());
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let mut m = micro();
        m.head_w.fill(0.0);
        m.head_b.fill(0.0);
        let p = PromptState::init(&m, 2, 0).unwrap();
        let (loss, _) = ptuning_loss(&m, &p, &[ex(&m, "red green", "blue")], false).unwrap();
        assert!((loss - (m.vocab_size() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn certain_model_loss_is_zero() {
        let mut m = micro();
        let target = m.vocab.id("blue").unwrap();
        m.head_w.fill(0.0);
        m.head_b.fill(-1e4);
        m.head_b.data[target] = 1e4;
        let p = PromptState::init(&m, 2, 0).unwrap();
        let (loss, _) = ptuning_loss(&m, &p, &[ex(&m, "red", "blue")], false).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = micro();
        let p = PromptState::init(&m, 2, 0).unwrap();
        assert!(matches!(ptuning_loss(&m, &p, &[], false), Err(Error::Empty(_))));
    }

    #[test]
    fn first_token_only_ignores_later_tokens() {
        let m = micro();
        let p = PromptState::init(&m, 2, 0).unwrap();
        let (a, _) = ptuning_loss(&m, &p, &[ex(&m, "red", "baby product")], true).unwrap();
        let (b, _) = ptuning_loss(&m, &p, &[ex(&m, "red", "baby")], false).unwrap();
        let (full, _) = ptuning_loss(&m, &p, &[ex(&m, "red", "baby product")], false).unwrap();
        assert_eq!(a, b);
        assert!(full > a);
    }

    #[test]
    fn zero_lr_leaves_prompt_unchanged() {
        let m = micro();
        let p = PromptState::init(&m, 2, 0).unwrap();
        let cfg = TuneConfig {
            lr: 0.0,
            epochs: 2,
            prompt_len: 2,
            ..Default::default()
        };
        let data = vec![ex(&m, "red", "blue"), ex(&m, "green", "baby product")];
        let (out, _) = train_prompt(&m, p.clone(), &data, &cfg).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn finetune_zero_epochs_is_identity_and_training_lowers_loss() {
        let m = micro();
        let data = vec![ex(&m, "red", "blue"), ex(&m, "green", "baby product"), ex(&m, "cyan", "white")];
        let cfg = TuneConfig {
            mode: TuneMode::FineTune,
            epochs: 0,
            discrete_template: "{q} black".into(),
            ..Default::default()
        };
        let (same, _) = finetune(&m, &data, &cfg).unwrap();
        assert_eq!(same, m);
        let cfg = TuneConfig { epochs: 30, lr: 1e-2, ..cfg };
        let (tuned, log) = finetune(&m, &data, &cfg).unwrap();
        let before = mean_loss(&m, &Prompting::Discrete(cfg.discrete_template.clone()), &data, false).unwrap();
        let after = mean_loss(&tuned, &Prompting::Discrete(cfg.discrete_template.clone()), &data, false).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(log.epoch_losses.last().unwrap() < log.epoch_losses.first().unwrap());
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let m = micro();
        let p = PromptState::init(&m, 3, 2).unwrap();
        let batch = vec![ex(&m, "red green", "baby product"), ex(&m, "cyan", "white")];
        let (_, grad) = ptuning_loss(&m, &p, &batch, false).unwrap();
        let eps = 1e-5;
        for i in 0..p.embeddings.len() {
            let mut hi = p.clone();
            hi.embeddings.data[i] += eps;
            let mut lo = p.clone();
            lo.embeddings.data[i] -= eps;
            let fd = (ptuning_loss(&m, &hi, &batch, false).unwrap().0 - ptuning_loss(&m, &lo, &batch, false).unwrap().0)
                / (2.0 * eps);
            assert!((fd - grad.data[i]).abs() <= 1e-8 + 1e-4 * fd.abs(), "{i}: {fd} vs {}", grad.data[i]);
        }
    }

    #[test]
    fn prompt_checkpoint_roundtrip() {
        let m = micro();
        let p = PromptState::init(&m, 3, 9).unwrap();
        assert_eq!(PromptState::from_checkpoint(&p.to_checkpoint()).unwrap(), p);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let m = micro();
        let p = PromptState::init(&m, 2, 0).unwrap();
        let data = vec![ex(&m, "red", "blue")];
        let cfg = TuneConfig { mode: TuneMode::ZeroShot, ..Default::default() };
        assert!(train_prompt(&m, p, &data, &cfg).is_err());
        assert!(finetune(&m, &data, &cfg).is_err());
    }
}
