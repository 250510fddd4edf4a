//! Stage-one baselines: demographic popularity, Okapi BM25 over category
//! documents, and a concatenated-input encoder classifier. All of them
//! implement [`CategoryRetriever`], so the same ranker sits behind each.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{AgeBand, Catalog, Category, Gender, InteractionTriplet, Query};
use crate::checkpoint::{restore, Checkpoint};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lm::{split_words, Vocab};
use crate::optim::{OptimConfig, Optimizer};
use crate::ranker::{encoder_vocab, weighted_bce, EncoderConfig, RankLog, RankTrainConfig, TextEncoder};
use crate::retrieval::{CategoryRetriever, CategoryScore, RankedCategories};
use crate::transformer::Mlp;

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DemographicLevel {
    Age,
    Gender,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PopularityStats {
    /// Every catalog category id, so zero counts still rank.
    pub categories: Vec<String>,
    pub global: BTreeMap<String, u64>,
    pub by_age: BTreeMap<AgeBand, BTreeMap<String, u64>>,
    pub by_gender: BTreeMap<Gender, BTreeMap<String, u64>>,
    pub has_demographics: bool,
}

pub fn build_popularity(train: &[InteractionTriplet], catalog: &Catalog) -> PopularityStats {
    let mut stats = PopularityStats {
        categories: catalog.categories().iter().map(|c| c.id.clone()).collect(),
        has_demographics: catalog.has_demographics(),
        ..Default::default()
    };
    for t in train {
        *stats.global.entry(t.category_id.clone()).or_default() += 1;
        let Some(q) = catalog.query(&t.query_id) else { continue };
        if let Some(a) = q.user_age_band {
            *stats.by_age.entry(a).or_default().entry(t.category_id.clone()).or_default() += 1;
        }
        if let Some(g) = q.user_gender {
            *stats.by_gender.entry(g).or_default().entry(t.category_id.clone()).or_default() += 1;
        }
    }
    stats
}

/// Categories by purchase count in the query's bucket; an absent or empty
/// bucket falls back to global counts.
pub fn toppop_retrieve(stats: &PopularityStats, query: &Query, level: DemographicLevel, k: usize) -> Result<RankedCategories> {
    check_k(k)?;
    let bucket = match level {
        DemographicLevel::Age => query.user_age_band.and_then(|a| stats.by_age.get(&a)),
        DemographicLevel::Gender => query.user_gender.and_then(|g| stats.by_gender.get(&g)),
    };
    let counts = match bucket {
        Some(b) if !b.is_empty() => b,
        _ => &stats.global,
    };
    let scores = stats
        .categories
        .iter()
        .map(|c| CategoryScore {
            category_id: c.clone(),
            score: counts.get(c).copied().unwrap_or(0) as f64,
        })
        .collect();
    Ok(RankedCategories::from_scores(scores, k))
}

#[derive(Debug, Clone)]
pub struct TopPopRetriever {
    pub stats: PopularityStats,
    pub level: DemographicLevel,
}

impl TopPopRetriever {
    /// Refuses worlds collected without demographics.
    pub fn new(stats: PopularityStats, level: DemographicLevel) -> Result<Self> {
        if !stats.has_demographics {
            return Err(Error::Precondition("popularity baseline needs demographic fields".into()));
        }
        Ok(Self { stats, level })
    }
}

impl CategoryRetriever for TopPopRetriever {
    fn name(&self) -> String {
        match self.level {
            DemographicLevel::Age => "toppop_age".into(),
            DemographicLevel::Gender => "toppop_gender".into(),
        }
    }

    fn retrieve(&self, query: &Query, k: usize) -> Result<RankedCategories> {
        toppop_retrieve(&self.stats, query, self.level, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Stats {
    pub params: Bm25Params,
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
}

impl Bm25Stats {
    /// Indexes `(id, text)` documents; text is lowercased and split into words.
    pub fn from_documents(docs: &[(String, String)], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("bm25 document set".into()));
        }
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut lengths = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for (_, text) in docs {
            let words = split_words(text);
            let mut tf: HashMap<String, usize> = HashMap::new();
            for w in &words {
                *tf.entry(w.clone()).or_default() += 1;
            }
            for w in tf.keys() {
                *df.entry(w.clone()).or_default() += 1;
            }
            lengths.push(words.len());
            term_freqs.push(tf);
        }
        let avgdl = lengths.iter().sum::<usize>() as f64 / docs.len() as f64;
        if !(avgdl > 0.0) {
            return Err(Error::Empty("bm25 documents contain no words".into()));
        }
        Ok(Self {
            params,
            ids: docs.iter().map(|(id, _)| id.clone()).collect(),
            term_freqs,
            lengths,
            df,
            avgdl,
        })
    }

    /// One document per category: its name, plus its product titles when `enrich` is set.
    pub fn for_catalog(catalog: &Catalog, enrich: bool, params: Bm25Params) -> Result<Self> {
        let mut titles: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        if enrich {
            for p in catalog.products() {
                titles.entry(&p.category_id).or_default().push(&p.title);
            }
        }
        let docs: Vec<(String, String)> = catalog
            .categories()
            .iter()
            .map(|c| {
                let mut text = c.name.clone();
                for t in titles.get(c.id.as_str()).into_iter().flatten() {
                    text.push(' ');
                    text.push_str(t);
                }
                (c.id.clone(), text)
            })
            .collect();
        Self::from_documents(&docs, params)
    }

    pub fn num_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_index(&self, terms: &[String], d: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * self.lengths[d] as f64 / self.avgdl);
        terms
            .iter()
            .map(|t| match self.term_freqs[d].get(t) {
                Some(&tf) => {
                    let tf = tf as f64;
                    self.idf(t) * tf * (k1 + 1.0) / (tf + norm)
                }
                None => 0.0,
            })
            .sum()
    }
}

/// Distinct query words, in first-appearance order.
fn query_terms(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    split_words(text).into_iter().filter(|w| seen.insert(w.clone())).collect()
}

pub fn bm25_score(query_text: &str, doc_id: &str, stats: &Bm25Stats) -> Result<f64> {
    let d = stats
        .ids
        .iter()
        .position(|id| id == doc_id)
        .ok_or_else(|| Error::DanglingReference(format!("bm25 document {doc_id}")))?;
    Ok(stats.score_index(&query_terms(query_text), d))
}

pub fn bm25_retrieve(query_text: &str, stats: &Bm25Stats, k: usize) -> Result<RankedCategories> {
    check_k(k)?;
    let terms = query_terms(query_text);
    let scores = (0..stats.num_docs())
        .map(|d| CategoryScore {
            category_id: stats.ids[d].clone(),
            score: stats.score_index(&terms, d),
        })
        .collect();
    Ok(RankedCategories::from_scores(scores, k))
}

#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    pub stats: Bm25Stats,
}

impl CategoryRetriever for Bm25Retriever {
    fn name(&self) -> String {
        "bm25".into()
    }

    fn retrieve(&self, query: &Query, k: usize) -> Result<RankedCategories> {
        bm25_retrieve(&query.text, &self.stats, k)
    }
}

pub const ENCODER_SIM_KIND: &str = "encoder_sim";
/// Separator between query and category text in the concatenated input.
pub const PAIR_SEPARATOR: &str = "|";

/// Concatenated-input relevance classifier: encoder over `query | category`
/// followed by a scalar MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSim {
    pub encoder: TextEncoder,
    pub head: Mlp,
    pub head_hidden: usize,
    pub trained: bool,
}

fn pair_text(query_text: &str, category_name: &str) -> String {
    format!("{query_text} {PAIR_SEPARATOR} {category_name}")
}

impl EncoderSim {
    pub fn new(vocab: Vocab, config: EncoderConfig, head_hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TextEncoder::new(vocab, config, &mut rng)?;
        let head = Mlp::init(config.hidden, head_hidden, 1, &mut rng);
        Ok(Self {
            encoder,
            head,
            head_hidden,
            trained: false,
        })
    }

    pub fn for_catalog(catalog: &Catalog, config: EncoderConfig, head_hidden: usize, seed: u64) -> Result<Self> {
        Self::new(encoder_vocab(catalog, &[PAIR_SEPARATOR])?, config, head_hidden, seed)
    }

    pub fn relevance(&self, query_text: &str, category_name: &str) -> Result<f64> {
        let v = self.encoder.encode(&pair_text(query_text, category_name))?;
        Ok(self.head.apply(&v)[0])
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
            head_hidden: self.head_hidden,
            trained: self.trained,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = self.encoder.tensors("encoder.");
        out.extend(self.head.tensors("head."));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = self.encoder.tensors_mut("encoder.");
        out.extend(self.head.tensors_mut("head."));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "encoder": self.encoder.config,
            "head_hidden": self.head_hidden,
            "trained": self.trained,
            "vocab": self.encoder.vocab.tokens(),
        });
        let mut ck = Checkpoint::new(ENCODER_SIM_KIND, meta);
        for (name, m) in self.tensors() {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ENCODER_SIM_KIND)?;
        let config: EncoderConfig = serde_json::from_value(ck.meta["encoder"].clone())?;
        let head_hidden: usize = serde_json::from_value(ck.meta["head_hidden"].clone())?;
        let tokens: Vec<String> = serde_json::from_value(ck.meta["vocab"].clone())?;
        let mut m = Self::new(Vocab::from_tokens(tokens), config, head_hidden, 0)?;
        restore(ck, m.tensors_mut())?;
        m.trained = ck.meta["trained"].as_bool().unwrap_or(false);
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Query text with its true category and `ratio` other categories drawn
/// uniformly without replacement.
fn category_pairs(
    train: &[InteractionTriplet],
    catalog: &Catalog,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<(String, bool)>>> {
    let cats = catalog.categories();
    if ratio + 1 > cats.len() {
        return Err(Error::Precondition(format!(
            "negative ratio {ratio} needs more than {} categories",
            cats.len()
        )));
    }
    let mut groups = Vec::with_capacity(train.len());
    for t in train {
        let q = catalog
            .query(&t.query_id)
            .ok_or_else(|| Error::DanglingReference(format!("query {}", t.query_id)))?;
        let others: Vec<&Category> = cats.iter().filter(|c| c.id != t.category_id).collect();
        let truth = catalog
            .category(&t.category_id)
            .ok_or_else(|| Error::DanglingReference(format!("category {}", t.category_id)))?;
        let mut g = vec![(pair_text(&q.text, &truth.name), true)];
        for i in index::sample(rng, others.len(), ratio) {
            g.push((pair_text(&q.text, &others[i].name), false));
        }
        groups.push(g);
    }
    Ok(groups)
}

fn pair_batch_loss(model: &EncoderSim, pairs: &[&(String, bool)], pos_weight: f64, grads: Option<&mut EncoderSim>) -> Result<f64> {
    let mut x = Mat::zeros(pairs.len(), model.encoder.dim());
    let mut caches = Vec::with_capacity(pairs.len());
    for (r, (text, _)) in pairs.iter().enumerate() {
        let (v, c) = model.encoder.encode_with_cache(text)?;
        x.row_mut(r).copy_from_slice(&v);
        caches.push(c);
    }
    let (y, hcache) = model.head.forward(&x);
    let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
    let (loss, ds) = weighted_bce(&y.data, &labels, pos_weight)?;
    if let Some(g) = grads {
        let dy = Mat::from_vec(ds.len(), 1, ds);
        let dx = model.head.backward(&hcache, &dy, Some(&mut g.head));
        for (r, c) in caches.iter().enumerate() {
            model.encoder.backward(c, dx.row(r), &mut g.encoder);
        }
    }
    Ok(loss)
}

/// BCE training on (query, category) pairs; marks the model trained.
pub fn train_encoder_sim(
    model: &mut EncoderSim,
    train: &[InteractionTriplet],
    catalog: &Catalog,
    config: &RankTrainConfig,
) -> Result<RankLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("encoder baseline training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(OptimConfig {
        lr: config.lr,
        ..OptimConfig::default()
    });
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut groups = category_pairs(train, catalog, config.negative_ratio, &mut rng)?;
        groups.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in groups.chunks(config.batch_size) {
            let refs: Vec<&(String, bool)> = batch.iter().flatten().collect();
            let mut grads = model.zeros_like();
            total += pair_batch_loss(model, &refs, config.pos_weight(), Some(&mut grads))? * refs.len() as f64;
            count += refs.len();
            let g: Vec<&Mat> = grads.tensors().into_iter().map(|(_, m)| m).collect();
            let p: Vec<&mut Mat> = model.tensors_mut().into_iter().map(|(_, m)| m).collect();
            opt.step(p, g);
        }
        let mean = total / count as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("encoder baseline epoch {epoch}")));
        }
        log::info!("encoder baseline epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    model.trained = true;
    Ok(RankLog {
        epoch_losses,
        steps: opt.steps_taken(),
    })
}

pub fn encoder_sim_retrieve(model: &EncoderSim, query_text: &str, categories: &[Category], k: usize) -> Result<RankedCategories> {
    check_k(k)?;
    if !model.trained {
        return Err(Error::Untrained("encoder similarity baseline must be trained before retrieval".into()));
    }
    let mut scores = Vec::with_capacity(categories.len());
    for c in categories {
        let s = model.relevance(query_text, &c.name)?;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("relevance of category {}", c.id)));
        }
        scores.push(CategoryScore {
            category_id: c.id.clone(),
            score: s,
        });
    }
    Ok(RankedCategories::from_scores(scores, k))
}

#[derive(Debug, Clone)]
pub struct EncoderSimRetriever {
    pub model: EncoderSim,
    pub categories: Vec<Category>,
}

impl CategoryRetriever for EncoderSimRetriever {
    fn name(&self) -> String {
        "encoder_sim".into()
    }

    fn retrieve(&self, query: &Query, k: usize) -> Result<RankedCategories> {
        encoder_sim_retrieve(&self.model, &query.text, &self.categories, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Product, TripletRecord};

    fn demo_catalog(with_demo: bool) -> Catalog {
        let categories: Vec<Category> = ["toys", "baby product", "books"]
            .iter()
            .enumerate()
            .map(|(i, n)| Category { id: format!("c{i}"), name: n.to_string() })
            .collect();
        let products: Vec<Product> = (0..6)
            .map(|i| Product {
                id: format!("p{i}"),
                title: format!("{} item {i}", categories[i % 3].name),
                category_id: format!("c{}", i % 3),
            })
            .collect();
        // (age, gender, product)
        let rows = [
            (AgeBand::Twenties, Gender::Female, 0),
            (AgeBand::Twenties, Gender::Female, 3),
            (AgeBand::Twenties, Gender::Male, 1),
            (AgeBand::Thirties, Gender::Male, 1),
            (AgeBand::Thirties, Gender::Male, 4),
            (AgeBand::Thirties, Gender::Female, 2),
        ];
        let records: Vec<TripletRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, g, p))| TripletRecord {
                query_id: format!("q{i}"),
                query_text: format!("gift idea number {i} for a little one"),
                product_id: format!("p{p}"),
                category_id: format!("c{}", p % 3),
                age_band: with_demo.then_some(a),
                gender: with_demo.then_some(g),
            })
            .collect();
        Catalog::from_records(categories, products, &records).unwrap()
    }

    #[test]
    fn popularity_counts_match_brute_force() {
        let cat = demo_catalog(true);
        let stats = build_popularity(cat.triplets(), &cat);
        for c in cat.categories() {
            let n = cat.triplets().iter().filter(|t| t.category_id == c.id).count() as u64;
            assert_eq!(stats.global.get(&c.id).copied().unwrap_or(0), n);
            let summed: u64 = stats.by_age.values().map(|b| b.get(&c.id).copied().unwrap_or(0)).sum();
            assert_eq!(summed, n);
        }
        assert_eq!(stats.global["c0"], 2);
        assert_eq!(stats.by_age[&AgeBand::Twenties]["c0"], 2);
        assert_eq!(stats.by_age[&AgeBand::Thirties]["c1"], 2);
    }

    #[test]
    fn popularity_ignores_input_order() {
        let cat = demo_catalog(true);
        let mut rev = cat.triplets().to_vec();
        rev.reverse();
        assert_eq!(build_popularity(cat.triplets(), &cat), build_popularity(&rev, &cat));
    }

    #[test]
    fn toppop_uses_bucket_then_global() {
        let cat = demo_catalog(true);
        let stats = build_popularity(cat.triplets(), &cat);
        let mut q = cat.queries()[0].clone();
        q.user_age_band = Some(AgeBand::Thirties);
        let r = toppop_retrieve(&stats, &q, DemographicLevel::Age, 1).unwrap();
        assert_eq!(r.ids(), vec!["c1"]);
        q.user_age_band = Some(AgeBand::Sixties);
        let g = toppop_retrieve(&stats, &q, DemographicLevel::Age, 3).unwrap();
        // Unknown bucket: global counts c1 = 3, c0 = 2, c2 = 1.
        assert_eq!(g.ids(), vec!["c1", "c0", "c2"]);
        q.user_gender = None;
        assert_eq!(toppop_retrieve(&stats, &q, DemographicLevel::Gender, 3).unwrap(), g);
        assert!(toppop_retrieve(&stats, &q, DemographicLevel::Age, 0).is_err());
    }

    #[test]
    fn toppop_refused_without_demographics() {
        let cat = demo_catalog(false);
        let stats = build_popularity(cat.triplets(), &cat);
        assert!(stats.by_age.is_empty() && stats.by_gender.is_empty());
        assert!(TopPopRetriever::new(stats, DemographicLevel::Age).is_err());
    }

    fn toy() -> Bm25Stats {
        let docs = vec![
            ("d0".to_string(), "baby product".to_string()),
            ("d1".to_string(), "baby toys and baby books".to_string()),
            ("d2".to_string(), "kitchen appliance".to_string()),
        ];
        Bm25Stats::from_documents(&docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn bm25_matches_hand_computation() {
        let s = toy();
        // N = 3, avgdl = (2 + 5 + 2) / 3 = 3; df(baby) = 2, df(product) = 1.
        let idf_baby = ((3.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln();
        let idf_product = ((3.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln();
        let k1 = 1.2;
        let norm0 = k1 * (1.0 - 0.75 + 0.75 * 2.0 / 3.0);
        let norm1 = k1 * (1.0 - 0.75 + 0.75 * 5.0 / 3.0);
        let want0 = idf_baby * 2.2 / (1.0 + norm0) + idf_product * 2.2 / (1.0 + norm0);
        let want1 = idf_baby * 2.0 * 2.2 / (2.0 + norm1);
        assert!((bm25_score("baby product", "d0", &s).unwrap() - want0).abs() < 1e-9);
        assert!((bm25_score("baby product", "d1", &s).unwrap() - want1).abs() < 1e-9);
        assert_eq!(bm25_score("baby product", "d2", &s).unwrap(), 0.0);
        assert!(bm25_score("x", "d9", &s).is_err());
    }

    #[test]
    fn bm25_saturates_term_frequency() {
        let one = Bm25Stats::from_documents(&[("a".into(), "cat dog".into()), ("b".into(), "fish".into())], Bm25Params::default()).unwrap();
        let two = Bm25Stats::from_documents(&[("a".into(), "cat cat".into()), ("b".into(), "fish".into())], Bm25Params::default()).unwrap();
        let s1 = bm25_score("cat", "a", &one).unwrap();
        let s2 = bm25_score("cat", "a", &two).unwrap();
        assert!(s2 > s1 && s2 < 2.0 * s1);
    }

    #[test]
    fn bm25_retrieve_sorts_and_breaks_ties() {
        let s = toy();
        let r = bm25_retrieve("baby", &s, 3).unwrap();
        let brute = {
            let mut v: Vec<(f64, &str)> = ["d0", "d1", "d2"].iter().map(|d| (bm25_score("baby", d, &s).unwrap(), *d)).collect();
            v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
            v.into_iter().map(|(_, d)| d).collect::<Vec<_>>()
        };
        assert_eq!(r.ids(), brute);
        assert_eq!(bm25_retrieve("zebra", &s, 3).unwrap().ids(), vec!["d0", "d1", "d2"]);
    }

    #[test]
    fn enriched_documents_include_titles() {
        let cat = demo_catalog(true);
        let plain = Bm25Stats::for_catalog(&cat, false, Bm25Params::default()).unwrap();
        let rich = Bm25Stats::for_catalog(&cat, true, Bm25Params::default()).unwrap();
        assert_eq!(plain.doc_freq("item"), 0);
        assert_eq!(rich.doc_freq("item"), 3);
    }

    fn micro_sim(cat: &Catalog) -> EncoderSim {
        let cfg = EncoderConfig { layers: 1, heads: 1, hidden: 8, n_ctx: 32, mlp_hidden: 8 };
        EncoderSim::for_catalog(cat, cfg, 6, 3).unwrap()
    }

    #[test]
    fn encoder_sim_refuses_untrained_and_matches_brute_force() {
        let cat = demo_catalog(true);
        let mut m = micro_sim(&cat);
        let q = &cat.queries()[0].text;
        assert!(matches!(encoder_sim_retrieve(&m, q, cat.categories(), 3), Err(Error::Untrained(_))));
        let cfg = RankTrainConfig { negative_ratio: 2, epochs: 2, batch_size: 2, lr: 1e-2, ..Default::default() };
        let log = train_encoder_sim(&mut m, cat.triplets(), &cat, &cfg).unwrap();
        assert_eq!(log.epoch_losses.len(), 2);
        let r = encoder_sim_retrieve(&m, q, cat.categories(), 10).unwrap();
        assert_eq!(r.len(), 3);
        let mut brute: Vec<(f64, String)> = cat.categories().iter().map(|c| (m.relevance(q, &c.name).unwrap(), c.id.clone())).collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        assert_eq!(r.ids(), brute.iter().map(|(_, id)| id.as_str()).collect::<Vec<_>>());
        assert_eq!(r, encoder_sim_retrieve(&m, q, cat.categories(), 10).unwrap());
        let back = EncoderSim::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn encoder_sim_gradients_match_finite_differences() {
        let cat = demo_catalog(true);
        let m = micro_sim(&cat);
        let pairs = vec![("gift for a baby | toys".to_string(), true), ("books | baby product".to_string(), false)];
        let refs: Vec<&(String, bool)> = pairs.iter().collect();
        let mut g = m.zeros_like();
        pair_batch_loss(&m, &refs, 2.0, Some(&mut g)).unwrap();
        let eps = 1e-5;
        for ti in 0..m.tensors().len() {
            let gt = g.tensors()[ti].1.clone();
            for i in (0..gt.len()).step_by(5) {
                let mut mp = m.clone();
                mp.tensors_mut()[ti].1.data[i] += eps;
                let mut mm = m.clone();
                mm.tensors_mut()[ti].1.data[i] -= eps;
                let fd = (pair_batch_loss(&mp, &refs, 2.0, None).unwrap() - pair_batch_loss(&mm, &refs, 2.0, None).unwrap()) / (2.0 * eps);
                assert!((fd - gt.data[i]).abs() <= 1e-4 * fd.abs().max(gt.data[i].abs()) + 1e-8);
            }
        }
    }
}
