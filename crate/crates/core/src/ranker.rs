//! Stage-two ranking: one bidirectional text encoder shared by queries and
//! products, an MLP head per side, and a dot-product score trained with
//! class-weighted binary cross-entropy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, InteractionTriplet};
use crate::checkpoint::{restore, Checkpoint};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat};
use crate::lm::Vocab;
use crate::optim::{OptimConfig, Optimizer};
use crate::transformer::{mean_pool, Mlp, MlpCache, Stack, StackCache, StackConfig};

pub const CHECKPOINT_KIND: &str = "ranker";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub n_ctx: usize,
    pub mlp_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 64,
            n_ctx: 64,
            mlp_hidden: 128,
        }
    }
}

impl EncoderConfig {
    fn stack(&self) -> StackConfig {
        StackConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            n_ctx: self.n_ctx,
            mlp_hidden: self.mlp_hidden,
            causal: false,
        }
    }
}

/// Bidirectional transformer with mean pooling over the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub tok_emb: Mat,
    pub body: Stack,
}

pub struct EncodeCache {
    ids: Vec<usize>,
    body: Option<StackCache>,
}

/// Vocabulary over every text a ranker or encoder baseline will read.
pub fn encoder_vocab(catalog: &Catalog, extra: &[&str]) -> Result<Vocab> {
    let mut texts: Vec<&str> = catalog.categories().iter().map(|c| c.name.as_str()).collect();
    texts.extend(catalog.products().iter().map(|p| p.title.as_str()));
    texts.extend(catalog.queries().iter().map(|q| q.text.as_str()));
    texts.extend(extra);
    Vocab::build(&texts)
}

impl TextEncoder {
    pub fn new<R: rand::Rng>(vocab: Vocab, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let body = Stack::init(config.stack(), rng)?;
        let h = config.hidden;
        Ok(Self {
            config,
            tok_emb: Mat::randn(vocab.len(), h, 1.0 / (h as f64).sqrt(), rng),
            vocab,
            body,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.hidden
    }

    fn token_ids(&self, text: &str) -> Vec<usize> {
        let mut ids = self.vocab.tokenize(text).0;
        if ids.len() > self.config.n_ctx {
            log::debug!("encoder input truncated from {} to {} tokens", ids.len(), self.config.n_ctx);
            ids.truncate(self.config.n_ctx);
        }
        ids
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_with_cache(text)?.0)
    }

    pub fn encode_with_cache(&self, text: &str) -> Result<(Vec<f64>, EncodeCache)> {
        let ids = self.token_ids(text);
        if ids.is_empty() {
            log::warn!("empty text encoded as the zero vector");
            return Ok((vec![0.0; self.dim()], EncodeCache { ids, body: None }));
        }
        let (out, cache) = self.body.forward(&self.tok_emb.select_rows(&ids))?;
        Ok((mean_pool(&out), EncodeCache { ids, body: Some(cache) }))
    }

    /// Accumulates parameter gradients for `d_vec`, the gradient of the pooled vector.
    pub fn backward(&self, cache: &EncodeCache, d_vec: &[f64], grads: &mut TextEncoder) {
        let Some(body) = &cache.body else { return };
        let n = cache.ids.len();
        let mut d_out = Mat::zeros(n, self.dim());
        for r in 0..n {
            axpy(1.0 / n as f64, d_vec, d_out.row_mut(r));
        }
        let d_in = self.body.backward(body, &d_out, Some(&mut grads.body));
        for (r, &id) in cache.ids.iter().enumerate() {
            axpy(1.0, d_in.row(r), grads.tok_emb.row_mut(id));
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            vocab: self.vocab.clone(),
            tok_emb: self.tok_emb.zeros_like(),
            body: self.body.zeros_like(),
        }
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &Mat)> {
        let mut out = vec![(format!("{prefix}tok_emb"), &self.tok_emb)];
        out.extend(self.body.tensors(&format!("{prefix}body.")));
        out
    }

    pub fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Mat)> {
        let mut out = vec![(format!("{prefix}tok_emb"), &mut self.tok_emb)];
        out.extend(self.body.tensors_mut(&format!("{prefix}body.")));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub score_dim: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: 64,
            score_dim: 32,
        }
    }
}

/// Projection from encoder space into score space.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Identity(usize),
    Mlp(Mlp),
}

pub enum HeadCache {
    Identity,
    Mlp(MlpCache),
}

impl Head {
    pub fn input_dim(&self) -> usize {
        match self {
            Head::Identity(n) => *n,
            Head::Mlp(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Head::Identity(n) => *n,
            Head::Mlp(m) => m.output_dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Head::Identity(_) => x.to_vec(),
            Head::Mlp(m) => m.apply(x),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, HeadCache) {
        match self {
            Head::Identity(_) => (x.clone(), HeadCache::Identity),
            Head::Mlp(m) => {
                let (y, c) = m.forward(x);
                (y, HeadCache::Mlp(c))
            }
        }
    }

    pub fn backward(&self, cache: &HeadCache, dy: &Mat, grads: &mut Head) -> Mat {
        match (self, cache, grads) {
            (Head::Mlp(m), HeadCache::Mlp(c), Head::Mlp(g)) => m.backward(c, dy, Some(g)),
            _ => dy.clone(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Head::Identity(n) => Head::Identity(*n),
            Head::Mlp(m) => Head::Mlp(m.zeros_like()),
        }
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &Mat)> {
        match self {
            Head::Identity(_) => Vec::new(),
            Head::Mlp(m) => m.tensors(prefix),
        }
    }

    pub fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Mat)> {
        match self {
            Head::Identity(_) => Vec::new(),
            Head::Mlp(m) => m.tensors_mut(prefix),
        }
    }
}

/// Query-side and product-side projections into the shared score space.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerHeads {
    pub query: Head,
    pub product: Head,
}

impl RankerHeads {
    pub fn identity(dim: usize) -> Self {
        Self {
            query: Head::Identity(dim),
            product: Head::Identity(dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            query: self.query.zeros_like(),
            product: self.product.zeros_like(),
        }
    }
}

/// `f(q; θ) · f(p; w)`.
pub fn similarity(q_vec: &[f64], p_vec: &[f64], heads: &RankerHeads) -> Result<f64> {
    if q_vec.len() != heads.query.input_dim() || p_vec.len() != heads.product.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "vectors {}/{} vs head inputs {}/{}",
            q_vec.len(),
            p_vec.len(),
            heads.query.input_dim(),
            heads.product.input_dim()
        )));
    }
    if heads.query.output_dim() != heads.product.output_dim() {
        return Err(Error::DimensionMismatch("head output sizes differ".into()));
    }
    Ok(dot(&heads.query.apply(q_vec), &heads.product.apply(p_vec)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    pub config: RankerConfig,
    pub encoder: TextEncoder,
    pub heads: RankerHeads,
}

impl Ranker {
    pub fn new(vocab: Vocab, config: RankerConfig, seed: u64) -> Result<Self> {
        if config.head_hidden == 0 || config.score_dim == 0 {
            return Err(Error::InvalidConfig("ranker head sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TextEncoder::new(vocab, config.encoder, &mut rng)?;
        let h = config.encoder.hidden;
        let heads = RankerHeads {
            query: Head::Mlp(Mlp::init(h, config.head_hidden, config.score_dim, &mut rng)),
            product: Head::Mlp(Mlp::init(h, config.head_hidden, config.score_dim, &mut rng)),
        };
        Ok(Self { config, encoder, heads })
    }

    pub fn query_vector(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.heads.query.apply(&self.encoder.encode(text)?))
    }

    pub fn product_vector(&self, title: &str) -> Result<Vec<f64>> {
        Ok(self.heads.product.apply(&self.encoder.encode(title)?))
    }

    pub fn score(&self, query_text: &str, product_title: &str) -> Result<f64> {
        similarity(
            &self.encoder.encode(query_text)?,
            &self.encoder.encode(product_title)?,
            &self.heads,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            encoder: self.encoder.zeros_like(),
            heads: self.heads.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = self.encoder.tensors("encoder.");
        out.extend(self.heads.query.tensors("heads.query."));
        out.extend(self.heads.product.tensors("heads.product."));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = self.encoder.tensors_mut("encoder.");
        out.extend(self.heads.query.tensors_mut("heads.query."));
        out.extend(self.heads.product.tensors_mut("heads.product."));
        out
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.tensors() {
            h.update(name.as_bytes());
            h.update(m.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "vocab": self.encoder.vocab.tokens(),
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        for (name, m) in self.tensors() {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: RankerConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let tokens: Vec<String> = serde_json::from_value(ck.meta["vocab"].clone())?;
        let mut r = Self::new(Vocab::from_tokens(tokens), config, 0)?;
        restore(ck, r.tensors_mut())?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// The (query, product) pairs of a training set.
#[derive(Debug, Clone, Default)]
pub struct PositiveSet {
    pairs: HashSet<(String, String)>,
}

impl PositiveSet {
    pub fn from_triplets(triplets: &[InteractionTriplet]) -> Self {
        Self {
            pairs: triplets
                .iter()
                .map(|t| (t.query_id.clone(), t.product_id.clone()))
                .collect(),
        }
    }

    pub fn contains(&self, query_id: &str, product_id: &str) -> bool {
        self.pairs.contains(&(query_id.to_string(), product_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn label(query_id: &str, product_id: &str, positives: &PositiveSet) -> u8 {
    u8::from(positives.contains(query_id, product_id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query_id: String,
    pub product_id: String,
    pub label: bool,
}

/// Each training positive followed by `ratio` negatives for the same query,
/// drawn uniformly without replacement from products the query never bought.
pub fn sample_negatives(
    train: &[InteractionTriplet],
    catalog: &Catalog,
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    if ratio == 0 {
        return Err(Error::InvalidConfig("negative ratio must be at least 1".into()));
    }
    let n_products = catalog.products().len();
    if ratio + 1 > n_products {
        return Err(Error::Precondition(format!(
            "negative ratio {ratio} needs more than {n_products} products"
        )));
    }
    let mut bought: HashMap<&str, HashSet<&str>> = HashMap::new();
    for t in train {
        bought.entry(&t.query_id).or_default().insert(&t.product_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(train.len() * (ratio + 1));
    for t in train {
        let own = &bought[t.query_id.as_str()];
        let pool: Vec<&str> = catalog
            .products()
            .iter()
            .map(|p| p.id.as_str())
            .filter(|p| !own.contains(p))
            .collect();
        if pool.len() < ratio {
            return Err(Error::Precondition(format!(
                "query {} has only {} negative products for ratio {ratio}",
                t.query_id,
                pool.len()
            )));
        }
        out.push(LabeledPair {
            query_id: t.query_id.clone(),
            product_id: t.product_id.clone(),
            label: true,
        });
        for i in index::sample(&mut rng, pool.len(), ratio) {
            out.push(LabeledPair {
                query_id: t.query_id.clone(),
                product_id: pool[i].to_string(),
                label: false,
            });
        }
    }
    Ok(out)
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x), computed without overflow.
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-[w·y·log σ(s) + (1-y)·log(1-σ(s))]` and its gradient w.r.t. each score.
pub fn weighted_bce(scores: &[f64], labels: &[bool], pos_weight: f64) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::Empty("bce batch".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let inv = 1.0 / scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        if y {
            loss -= pos_weight * log_sigmoid(s);
            grad.push(-pos_weight * (1.0 - sigmoid(s)) * inv);
        } else {
            loss -= log_sigmoid(-s);
            grad.push(sigmoid(s) * inv);
        }
    }
    Ok((loss * inv, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTrainConfig {
    pub negative_ratio: usize,
    /// Defaults to the negative ratio when unset.
    pub pos_weight: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Positives per batch; each brings its negatives along.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RankTrainConfig {
    fn default() -> Self {
        Self {
            negative_ratio: 4,
            pos_weight: None,
            lr: 3e-3,
            epochs: 4,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl RankTrainConfig {
    pub fn pos_weight(&self) -> f64 {
        self.pos_weight.unwrap_or(self.negative_ratio as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.negative_ratio == 0 {
            return Err(Error::InvalidConfig("negative ratio must be at least 1".into()));
        }
        if !(self.pos_weight() > 0.0) {
            return Err(Error::InvalidConfig("pos_weight must be positive".into()));
        }
        if self.batch_size == 0 || !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("batch size must be positive and lr finite, non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLog {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

struct Encoded {
    vectors: Mat,
    caches: Vec<EncodeCache>,
}

fn encode_all(encoder: &TextEncoder, texts: &[&str]) -> Result<Encoded> {
    let mut vectors = Mat::zeros(texts.len(), encoder.dim());
    let mut caches = Vec::with_capacity(texts.len());
    for (r, t) in texts.iter().enumerate() {
        let (v, c) = encoder.encode_with_cache(t)?;
        vectors.row_mut(r).copy_from_slice(&v);
        caches.push(c);
    }
    Ok(Encoded { vectors, caches })
}

/// Loss over a batch of labeled pairs; gradients accumulate into `grads`.
fn batch_loss(
    ranker: &Ranker,
    catalog: &Catalog,
    pairs: &[&LabeledPair],
    pos_weight: f64,
    grads: Option<&mut Ranker>,
) -> Result<f64> {
    let mut q_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut p_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut q_texts = Vec::new();
    let mut p_texts = Vec::new();
    let mut idx = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let qi = match q_index.get(pair.query_id.as_str()) {
            Some(&i) => i,
            None => {
                let q = catalog
                    .query(&pair.query_id)
                    .ok_or_else(|| Error::DanglingReference(format!("query {}", pair.query_id)))?;
                q_texts.push(q.text.as_str());
                q_index.insert(&pair.query_id, q_texts.len() - 1);
                q_texts.len() - 1
            }
        };
        let pi = match p_index.get(pair.product_id.as_str()) {
            Some(&i) => i,
            None => {
                let p = catalog
                    .product(&pair.product_id)
                    .ok_or_else(|| Error::DanglingReference(format!("product {}", pair.product_id)))?;
                p_texts.push(p.title.as_str());
                p_index.insert(&pair.product_id, p_texts.len() - 1);
                p_texts.len() - 1
            }
        };
        idx.push((qi, pi));
    }
    let qe = encode_all(&ranker.encoder, &q_texts)?;
    let pe = encode_all(&ranker.encoder, &p_texts)?;
    let (qa, qcache) = ranker.heads.query.forward(&qe.vectors);
    let (pb, pcache) = ranker.heads.product.forward(&pe.vectors);
    let scores: Vec<f64> = idx.iter().map(|&(qi, pi)| dot(qa.row(qi), pb.row(pi))).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    let (loss, ds) = weighted_bce(&scores, &labels, pos_weight)?;
    if let Some(g) = grads {
        let mut dqa = qa.zeros_like();
        let mut dpb = pb.zeros_like();
        for (&(qi, pi), &d) in idx.iter().zip(&ds) {
            axpy(d, pb.row(pi), dqa.row_mut(qi));
            axpy(d, qa.row(qi), dpb.row_mut(pi));
        }
        let dq = ranker.heads.query.backward(&qcache, &dqa, &mut g.heads.query);
        let dp = ranker.heads.product.backward(&pcache, &dpb, &mut g.heads.product);
        for (r, c) in qe.caches.iter().enumerate() {
            ranker.encoder.backward(c, dq.row(r), &mut g.encoder);
        }
        for (r, c) in pe.caches.iter().enumerate() {
            ranker.encoder.backward(c, dp.row(r), &mut g.encoder);
        }
    }
    Ok(loss)
}

/// Mean weighted BCE of a labeled pair set, without updates.
pub fn ranker_loss(ranker: &Ranker, catalog: &Catalog, pairs: &[LabeledPair], pos_weight: f64) -> Result<f64> {
    let refs: Vec<&LabeledPair> = pairs.iter().collect();
    batch_loss(ranker, catalog, &refs, pos_weight, None)
}

/// Updates encoder and both heads. Negatives are resampled every epoch.
pub fn train_ranker(
    ranker: &mut Ranker,
    train: &[InteractionTriplet],
    catalog: &Catalog,
    config: &RankTrainConfig,
) -> Result<RankLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("ranker training set".into()));
    }
    let group = config.negative_ratio + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(OptimConfig {
        lr: config.lr,
        ..OptimConfig::default()
    });
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let pairs = sample_negatives(train, catalog, config.negative_ratio, config.seed.wrapping_add(epoch as u64 + 1))?;
        let mut blocks: Vec<&[LabeledPair]> = pairs.chunks(group).collect();
        blocks.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in blocks.chunks(config.batch_size) {
            let refs: Vec<&LabeledPair> = batch.iter().flat_map(|b| b.iter()).collect();
            let mut grads = ranker.zeros_like();
            let loss = batch_loss(ranker, catalog, &refs, config.pos_weight(), Some(&mut grads))?;
            total += loss * refs.len() as f64;
            let g: Vec<&Mat> = grads.tensors().into_iter().map(|(_, m)| m).collect();
            let p: Vec<&mut Mat> = ranker.tensors_mut().into_iter().map(|(_, m)| m).collect();
            opt.step(p, g);
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("ranker epoch {epoch}")));
        }
        log::info!("ranker epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(RankLog {
        epoch_losses,
        steps: opt.steps_taken(),
    })
}

/// Product-side head outputs, computed once per catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductEmbeddings {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl ProductEmbeddings {
    pub fn build(ranker: &Ranker, catalog: &Catalog) -> Result<Self> {
        let mut vectors = BTreeMap::new();
        for p in catalog.products() {
            vectors.insert(p.id.clone(), ranker.product_vector(&p.title)?);
        }
        Ok(Self { vectors })
    }

    pub fn get(&self, product_id: &str) -> Option<&[f64]> {
        self.vectors.get(product_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductScore {
    pub product_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedProducts {
    pub items: Vec<ProductScore>,
    pub k: usize,
}

impl RankedProducts {
    pub fn from_scores(mut scores: Vec<ProductScore>, k: usize) -> Self {
        scores.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.product_id.cmp(&b.product_id))
        });
        scores.truncate(k);
        Self { items: scores, k }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|p| p.product_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query_id: String,
    pub rank: usize,
    pub product_id: String,
    pub score: f64,
}

pub fn rank_records(query_id: &str, ranked: &RankedProducts) -> Vec<RankRecord> {
    ranked
        .items
        .iter()
        .enumerate()
        .map(|(i, p)| RankRecord {
            query_id: query_id.to_string(),
            rank: i + 1,
            product_id: p.product_id.clone(),
            score: p.score,
        })
        .collect()
}

/// Orders candidate products by similarity to the query and keeps `k`.
pub fn rank(
    ranker: &Ranker,
    query_text: &str,
    candidates: &[String],
    catalog: &Catalog,
    k: usize,
    cache: Option<&ProductEmbeddings>,
) -> Result<RankedProducts> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Ok(RankedProducts { items: Vec::new(), k });
    }
    let qv = ranker.query_vector(query_text)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for id in candidates {
        let s = match cache.and_then(|c| c.get(id)) {
            Some(pv) => dot(&qv, pv),
            None => {
                let p = catalog
                    .product(id)
                    .ok_or_else(|| Error::DanglingReference(format!("candidate product {id}")))?;
                dot(&qv, &ranker.product_vector(&p.title)?)
            }
        };
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score of product {id}")));
        }
        scores.push(ProductScore {
            product_id: id.clone(),
            score: s,
        });
    }
    Ok(RankedProducts::from_scores(scores, k))
}
