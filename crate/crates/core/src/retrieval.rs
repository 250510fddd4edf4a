//! Stage one: score every category name under the prompted language model,
//! keep the top K, and expand them into candidate products.
//!
//! A category with tokens `t_1..t_T` scores `s = Σ_j α_j · logit_j`, where
//! `α_1 = 0.8`, the remaining 0.2 is split evenly over `t_2..t_T`, and
//! `logit_j` is read at the position that predicts `t_j`.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{Category, CategoryProductIndex, Query};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::lm::{CausalLM, UNK};
use crate::ptuning::{assemble_template, teacher_forced, OverflowPolicy, Prompting};

pub const FIRST_TOKEN_WEIGHT: f64 = 0.8;
/// Split evenly over tokens after the first. Kept as a literal: `1.0 - 0.8`
/// is not exactly 0.2 in binary floating point.
pub const TAIL_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeights(Vec<f64>);

impl TokenWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn token_weights(num_tokens: usize) -> Result<TokenWeights> {
    match num_tokens {
        0 => Err(Error::Precondition("a category needs at least one token".into())),
        1 => Ok(TokenWeights(vec![1.0])),
        n => {
            let rest = TAIL_WEIGHT / (n - 1) as f64;
            let mut w = vec![rest; n];
            w[0] = FIRST_TOKEN_WEIGHT;
            Ok(TokenWeights(w))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Raw pre-softmax logits.
    #[default]
    Logit,
    LogSoftmax,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StepConditioning {
    /// Step j conditions on the template and `t_1..t_{j-1}`.
    #[default]
    TeacherForced,
    /// Every step conditions on the template alone.
    Independent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub kind: ScoreKind,
    pub conditioning: StepConditioning,
    pub overflow: OverflowPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCategories {
    pub items: Vec<CategoryScore>,
    pub k: usize,
}

impl RankedCategories {
    /// Sorts descending by score (ids ascending on ties) and keeps `k`.
    pub fn from_scores(mut scores: Vec<CategoryScore>, k: usize) -> Self {
        scores.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.category_id.cmp(&b.category_id))
        });
        scores.truncate(k);
        Self { items: scores, k }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|c| c.category_id.as_str()).collect()
    }

    pub fn contains(&self, category_id: &str) -> bool {
        self.items.iter().any(|c| c.category_id == category_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Line record for serialized stage-one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: String,
    pub rank: usize,
    pub category_id: String,
    pub score: f64,
}

pub fn retrieval_records(query_id: &str, ranked: &RankedCategories) -> Vec<RetrievalRecord> {
    ranked
        .items
        .iter()
        .enumerate()
        .map(|(i, c)| RetrievalRecord {
            query_id: query_id.to_string(),
            rank: i + 1,
            category_id: c.category_id.clone(),
            score: c.score,
        })
        .collect()
}

fn read_score(row: &[f64], token: usize, kind: ScoreKind) -> f64 {
    match kind {
        ScoreKind::Logit => row[token],
        ScoreKind::LogSoftmax => row[token] - log_sum_exp(row),
    }
}

fn category_tokens(model: &CausalLM, category: &Category) -> Result<Vec<usize>> {
    let tokens = model.vocab.tokenize(&category.name).0;
    if tokens.is_empty() {
        return Err(Error::Empty(format!("category {} name has no tokens", category.id)));
    }
    if tokens.iter().all(|&t| t == UNK) {
        log::warn!("category {} ({}) is out of vocabulary; scored with UNK logits", category.id, category.name);
    }
    Ok(tokens)
}

/// Per-step scores `logit_j` for one category.
fn step_scores(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    tokens: &[usize],
    opts: &ScoringOptions,
    template_logits: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match opts.conditioning {
        StepConditioning::Independent => {
            let owned;
            let row = match template_logits {
                Some(r) => r,
                None => {
                    let asm = assemble_template(model, prompting, query_text, 0, opts.overflow)?;
                    owned = model.next_token_logits(&asm.embeddings)?;
                    &owned
                }
            };
            Ok(tokens.iter().map(|&t| read_score(row, t, opts.kind)).collect())
        }
        StepConditioning::TeacherForced => {
            if tokens.len() == 1 {
                if let Some(row) = template_logits {
                    return Ok(vec![read_score(row, tokens[0], opts.kind)]);
                }
            }
            let tf = teacher_forced(model, prompting, query_text, tokens, opts.overflow)?;
            let (logits, _) = model.forward_at(&tf.embeddings, &tf.positions)?;
            Ok(tokens
                .iter()
                .enumerate()
                .map(|(j, &t)| read_score(logits.row(j), t, opts.kind))
                .collect())
        }
    }
}

fn combine(steps: &[f64]) -> Result<f64> {
    let w = token_weights(steps.len())?;
    Ok(w.as_slice().iter().zip(steps).map(|(a, s)| a * s).sum())
}

pub fn category_score(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    category: &Category,
    opts: &ScoringOptions,
) -> Result<CategoryScore> {
    let tokens = category_tokens(model, category)?;
    let steps = step_scores(model, prompting, query_text, &tokens, opts, None)?;
    Ok(CategoryScore {
        category_id: category.id.clone(),
        score: combine(&steps)?,
    })
}

/// Scores every category. The template's own last-position logits are
/// computed once and shared by every single-token step that needs them;
/// causal masking makes them identical to those of any longer pass.
pub fn score_all(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    categories: &[Category],
    opts: &ScoringOptions,
) -> Result<Vec<CategoryScore>> {
    let asm = assemble_template(model, prompting, query_text, 0, opts.overflow)?;
    let shared = model.next_token_logits(&asm.embeddings)?;
    categories
        .iter()
        .map(|c| {
            let tokens = category_tokens(model, c)?;
            let steps = step_scores(model, prompting, query_text, &tokens, opts, Some(&shared))?;
            Ok(CategoryScore {
                category_id: c.id.clone(),
                score: combine(&steps)?,
            })
        })
        .collect()
}

pub fn retrieve_top_k(
    model: &CausalLM,
    prompting: &Prompting,
    query_text: &str,
    categories: &[Category],
    k: usize,
    opts: &ScoringOptions,
) -> Result<RankedCategories> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    if categories.is_empty() {
        return Err(Error::Empty("category set".into()));
    }
    let scores = score_all(model, prompting, query_text, categories, opts)?;
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite(format!("score of category {}", bad.category_id)));
    }
    Ok(RankedCategories::from_scores(scores, k))
}

/// Products of the retrieved categories, by category rank then product id.
pub fn candidate_products(index: &CategoryProductIndex, ranked: &RankedCategories) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in &ranked.items {
        for p in index.get(&c.category_id) {
            if seen.insert(p.clone()) {
                out.push(p.clone());
            }
        }
    }
    out
}

/// Anything that can produce stage-one category rankings for a query.
pub trait CategoryRetriever: Sync {
    fn name(&self) -> String;
    fn retrieve(&self, query: &Query, k: usize) -> Result<RankedCategories>;
}

/// Language-model retriever: soft prompt, discrete template or bare query.
#[derive(Debug, Clone)]
pub struct LmRetriever {
    pub label: String,
    pub model: CausalLM,
    pub prompting: Prompting,
    pub categories: Vec<Category>,
    pub options: ScoringOptions,
}

impl CategoryRetriever for LmRetriever {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn retrieve(&self, query: &Query, k: usize) -> Result<RankedCategories> {
        retrieve_top_k(&self.model, &self.prompting, &query.text, &self.categories, k, &self.options)
    }
}
