//! Hit-rate evaluation of two-stage pipelines, the tuning-mode comparison
//! and the cold-start protocol.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{build_category_index, Catalog, CategoryProductIndex, DatasetSplit, InteractionTriplet};
use crate::error::{Error, Result};
use crate::lm::CausalLM;
use crate::ptuning::{finetune, train_prompt, tune_examples, PromptState, Prompting, TuneConfig, TuneMode};
use crate::ranker::{rank, ProductEmbeddings, RankedProducts, Ranker};
use crate::retrieval::{candidate_products, CategoryRetriever, LmRetriever, ScoringOptions};

pub const REPORT_NOTE: &str =
    "HR values come from a synthetic world; compare orderings between methods, not absolute levels.";
pub const POOL_NOTE: &str = "when fewer than K candidates exist, HR@K is computed over the available list";

/// 1 when `truth` is among the first `k` entries.
pub fn hit_rate_at_k<S: AsRef<str>>(ranked: &[S], truth: &str, k: usize) -> Result<u8> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    Ok(u8::from(ranked.iter().take(k).any(|r| r.as_ref() == truth)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub category_ks: Vec<usize>,
    pub product_ks: Vec<usize>,
    /// Categories handed to the ranker.
    pub retrieve_k: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            category_ks: vec![1, 10],
            product_ks: vec![1, 10, 100, 300],
            retrieve_k: 10,
            seed: 0,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, ks) in [("category", &self.category_ks), ("product", &self.product_ks)] {
            if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "{name} K values must be positive and strictly increasing, got {ks:?}"
                )));
            }
        }
        if self.retrieve_k == 0 || self.workers == 0 {
            return Err(Error::InvalidConfig("retrieve_k and workers must be at least 1".into()));
        }
        Ok(())
    }

    fn stage_one_depth(&self) -> usize {
        self.retrieve_k.max(*self.category_ks.last().expect("validated"))
    }
}

/// Stage-two interface, so evaluation can swap in reference rankers.
pub trait ProductRanker: Sync {
    fn rank(&self, query_text: &str, candidates: &[String], k: usize) -> Result<RankedProducts>;
}

/// The trained dual encoder with a precomputed product-side cache.
pub struct DualEncoderRanker<'a> {
    pub ranker: &'a Ranker,
    pub catalog: &'a Catalog,
    cache: ProductEmbeddings,
}

impl<'a> DualEncoderRanker<'a> {
    pub fn new(ranker: &'a Ranker, catalog: &'a Catalog) -> Result<Self> {
        Ok(Self {
            ranker,
            catalog,
            cache: ProductEmbeddings::build(ranker, catalog)?,
        })
    }
}

impl ProductRanker for DualEncoderRanker<'_> {
    fn rank(&self, query_text: &str, candidates: &[String], k: usize) -> Result<RankedProducts> {
        rank(self.ranker, query_text, candidates, self.catalog, k, Some(&self.cache))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Category,
    Product,
}

impl Level {
    fn as_str(&self) -> &'static str {
        match self {
            Level::Category => "category",
            Level::Product => "product",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub split: String,
    pub level: Level,
    #[serde(rename = "K")]
    pub k: usize,
    pub hr: f64,
    pub n_queries: usize,
    pub cold_start: bool,
}

/// Per-query stage outputs, enough to recompute every HR value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub method: String,
    pub query_id: String,
    pub truth_category: String,
    pub truth_product: String,
    pub categories: Vec<String>,
    pub products: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, Value>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(config: &EvalConfig, split: &DatasetSplit) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("note".into(), json!(REPORT_NOTE));
        metadata.insert("pool".into(), json!(POOL_NOTE));
        metadata.insert("eval".into(), json!(config));
        metadata.insert(
            "split".into(),
            json!({"train": split.train.len(), "test": split.test.len(), "cold_start": split.cold_start}),
        );
        Self { metadata, rows: Vec::new() }
    }

    pub fn set_method_meta(&mut self, method: &str, meta: Value) {
        let methods = self.metadata.entry("methods".into()).or_insert_with(|| json!({}));
        methods[method] = meta;
    }

    pub fn hr(&self, method: &str, level: Level, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.level == level && r.k == k)
            .map(|r| r.hr)
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    /// HR must not decrease with K within a (method, split, level).
    pub fn check_monotone(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.method == b.method && a.split == b.split && a.level == b.level && a.k < b.k && b.hr < a.hr {
                return Err(Error::Precondition(format!(
                    "HR decreases from K={} to K={} for {}",
                    a.k, b.k, a.method
                )));
            }
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let text = match v {
                Value::String(t) => t.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(s, "# {k}: {text}");
        }
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(
            s,
            "{:<width$}  {:<10}  {:<8}  {:>4}  {:>7}  {:>9}",
            "method", "split", "level", "K", "HR", "n_queries"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<10}  {:<8}  {:>4}  {:>7.4}  {:>9}",
                r.method,
                r.split,
                r.level.as_str(),
                r.k,
                r.hr,
                r.n_queries
            );
        }
        s
    }

    /// One JSON record per row, each carrying the report metadata.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["metadata"] = json!(self.metadata);
            s.push_str(&serde_json::to_string(&v)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn merge(&mut self, other: EvalReport) {
        for (k, v) in other.metadata {
            match (self.metadata.get_mut(&k), v) {
                (Some(Value::Object(mine)), Value::Object(theirs)) => mine.extend(theirs),
                (_, v) => {
                    self.metadata.insert(k, v);
                }
            }
        }
        self.rows.extend(other.rows);
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t = dir.join(format!("{stem}.txt"));
        fs::write(&t, self.to_table()).map_err(|e| Error::io(&t, e))?;
        let j = dir.join(format!("{stem}.jsonl"));
        fs::write(&j, self.to_jsonl()?).map_err(|e| Error::io(&j, e))
    }
}

pub fn write_outcomes(path: &Path, outcomes: &[QueryOutcome]) -> Result<()> {
    crate::catalog::write_jsonl(path, outcomes)
}

/// Applies `f` to every item on up to `workers` threads; output keeps input order.
fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    if workers <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Result<Vec<U>>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn outcome(
    method: &dyn CategoryRetriever,
    ranker: Option<&dyn ProductRanker>,
    catalog: &Catalog,
    index: &CategoryProductIndex,
    t: &InteractionTriplet,
    config: &EvalConfig,
) -> Result<QueryOutcome> {
    let q = catalog
        .query(&t.query_id)
        .ok_or_else(|| Error::DanglingReference(format!("query {}", t.query_id)))?;
    let mut ranked = method.retrieve(q, config.stage_one_depth())?;
    let categories: Vec<String> = ranked.ids().iter().map(|s| s.to_string()).collect();
    ranked.items.truncate(config.retrieve_k);
    let products = match ranker {
        Some(r) => {
            let cands = candidate_products(index, &ranked);
            let k = *config.product_ks.last().expect("validated");
            let out = r.rank(&q.text, &cands, k)?;
            if let Some(stray) = out.items.iter().find(|p| !cands.contains(&p.product_id)) {
                return Err(Error::Precondition(format!(
                    "ranker returned {} outside the candidate set",
                    stray.product_id
                )));
            }
            out.ids().iter().map(|s| s.to_string()).collect()
        }
        None => Vec::new(),
    };
    Ok(QueryOutcome {
        method: method.name(),
        query_id: t.query_id.clone(),
        truth_category: t.category_id.clone(),
        truth_product: t.product_id.clone(),
        categories,
        products,
    })
}

/// HR rows recomputed from per-query outcomes.
pub fn rows_from_outcomes(
    method: &str,
    split_name: &str,
    cold_start: bool,
    outcomes: &[QueryOutcome],
    config: &EvalConfig,
    with_products: bool,
) -> Result<Vec<EvalRow>> {
    if outcomes.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let n = outcomes.len();
    for o in outcomes {
        let in_pool = hit_rate_at_k(&o.categories, &o.truth_category, config.retrieve_k)? == 1;
        if !in_pool && o.products.iter().any(|p| p == &o.truth_product) {
            return Err(Error::Precondition(format!(
                "query {}: truth product ranked although its category was not retrieved",
                o.query_id
            )));
        }
    }
    let mut rows = Vec::new();
    let mut push = |level: Level, ks: &[usize], pick: &dyn Fn(&QueryOutcome) -> (&[String], &str)| -> Result<()> {
        for &k in ks {
            let mut hits = 0usize;
            for o in outcomes {
                let (list, truth) = pick(o);
                hits += hit_rate_at_k(list, truth, k)? as usize;
            }
            rows.push(EvalRow {
                method: method.to_string(),
                split: split_name.to_string(),
                level,
                k,
                hr: hits as f64 / n as f64,
                n_queries: n,
                cold_start,
            });
        }
        Ok(())
    };
    push(Level::Category, &config.category_ks, &|o| (&o.categories, &o.truth_category))?;
    if with_products {
        push(Level::Product, &config.product_ks, &|o| (&o.products, &o.truth_product))?;
    }
    Ok(rows)
}

/// Stage one, candidate expansion and stage two for every test triplet.
pub fn evaluate_pipeline(
    method: &dyn CategoryRetriever,
    ranker: Option<&dyn ProductRanker>,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &EvalConfig,
) -> Result<(Vec<EvalRow>, Vec<QueryOutcome>)> {
    config.validate()?;
    let index = build_category_index(catalog);
    let outcomes = parallel_map(&split.test, config.workers, |t| {
        outcome(method, ranker, catalog, &index, t, config)
    })?;
    let split_name = if split.cold_start { "cold_start" } else { "standard" };
    let rows = rows_from_outcomes(&method.name(), split_name, split.cold_start, &outcomes, config, ranker.is_some())?;
    Ok((rows, outcomes))
}

/// Evaluates several stage-one methods on one split into a single report.
pub fn evaluate_methods(
    methods: &[&dyn CategoryRetriever],
    ranker: Option<&dyn ProductRanker>,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<QueryOutcome>)> {
    split.verify()?;
    let mut report = EvalReport::new(config, split);
    let mut all = Vec::new();
    for m in methods {
        let (rows, outcomes) = evaluate_pipeline(*m, ranker, catalog, split, config)?;
        report.rows.extend(rows);
        all.extend(outcomes);
    }
    report.check_monotone()?;
    Ok((report, all))
}

/// Refuses splits that are not product-disjoint cold-start splits.
pub fn cold_start_eval(
    methods: &[&dyn CategoryRetriever],
    ranker: Option<&dyn ProductRanker>,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<QueryOutcome>)> {
    if !split.cold_start {
        return Err(Error::Precondition("cold-start evaluation needs a cold-start split".into()));
    }
    evaluate_methods(methods, ranker, catalog, split, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub ptune: TuneConfig,
    pub finetune: TuneConfig,
    pub scoring: ScoringOptions,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            ptune: TuneConfig::default(),
            finetune: TuneConfig {
                mode: TuneMode::FineTune,
                lr: 3e-3,
                ..TuneConfig::default()
            },
            scoring: ScoringOptions::default(),
        }
    }
}

pub struct TuningComparison {
    pub report: EvalReport,
    pub prompt: PromptState,
    pub finetuned: CausalLM,
}

fn param_count(model: &CausalLM) -> usize {
    model.tensors().iter().map(|(_, m)| m.len()).sum()
}

/// Zero-shot, fine-tuned and p-tuned retrieval from one backbone on one split.
pub fn compare_tuning_modes(
    model: &CausalLM,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &CompareConfig,
    ranker: Option<&dyn ProductRanker>,
    eval: &EvalConfig,
) -> Result<TuningComparison> {
    let train = tune_examples(catalog, &split.train, &model.vocab)?;
    let categories = catalog.categories().to_vec();
    let template = Prompting::Discrete(config.ptune.discrete_template.clone());
    let mut report = EvalReport::new(eval, split);
    report.metadata.insert("scoring".into(), json!(config.scoring));

    let zero = LmRetriever {
        label: "zero_shot".into(),
        model: model.clone(),
        prompting: template.clone(),
        categories: categories.clone(),
        options: config.scoring,
    };
    report.set_method_meta("zero_shot", json!({"trained_parameters": 0, "epochs": 0, "steps": 0}));

    let (finetuned, ft_log) = finetune(model, &train, &config.finetune)?;
    let fine = LmRetriever {
        label: "fine_tune".into(),
        model: finetuned,
        prompting: template,
        categories: categories.clone(),
        options: config.scoring,
    };
    report.set_method_meta(
        "fine_tune",
        json!({"trained_parameters": param_count(model), "epochs": config.finetune.epochs,
               "steps": ft_log.steps, "lr": config.finetune.lr, "final_loss": ft_log.epoch_losses.last()}),
    );

    let init = PromptState::init(model, config.ptune.prompt_len, config.ptune.seed)?;
    let (prompt, pt_log) = train_prompt(model, init, &train, &config.ptune)?;
    let pt = LmRetriever {
        label: "p_tune".into(),
        model: model.clone(),
        prompting: Prompting::Soft(prompt.clone()),
        categories,
        options: config.scoring,
    };
    report.set_method_meta(
        "p_tune",
        json!({"trained_parameters": prompt.embeddings.len(), "epochs": config.ptune.epochs,
               "steps": pt_log.steps, "lr": config.ptune.lr, "prompt_len": prompt.len(),
               "final_loss": pt_log.epoch_losses.last()}),
    );

    let (rest, _) = evaluate_methods(&[&zero, &fine, &pt], ranker, catalog, split, eval)?;
    report.rows = rest.rows;
    Ok(TuningComparison {
        report,
        prompt,
        finetuned: fine.model,
    })
}
