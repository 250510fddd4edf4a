//! Layered run settings: built-in defaults, then a TOML file, then flags.

use std::fs;
use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::baselines::{Bm25Params, DemographicLevel};
use crate::catalog::{split_dataset, Catalog, DatasetSplit};
use crate::datagen::{TemplateSet, WorldConfig};
use crate::error::{Error, Result};
use crate::eval::{CompareConfig, EvalConfig};
use crate::lm::{LmConfig, LmTrainConfig};
use crate::optim::OptimConfig;
use crate::ptuning::{OverflowPolicy, TuneConfig, TuneMode, DEFAULT_PROMPT_LEN, DEFAULT_TEMPLATE};
use crate::ranker::{EncoderConfig, RankTrainConfig, RankerConfig};
use crate::retrieval::{ScoreKind, ScoringOptions, StepConditioning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSettings {
    pub num_categories: usize,
    pub products_per_category: usize,
    pub num_queries: usize,
    pub signal_strength: f64,
    pub template_set: TemplateSet,
    pub seed: u64,
}

impl Default for WorldSettings {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            num_categories: w.num_categories,
            products_per_category: w.products_per_category,
            num_queries: w.num_queries,
            signal_strength: w.signal_strength,
            template_set: w.template_set,
            seed: w.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub n_ctx: usize,
    pub mlp_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LmSettings {
    fn default() -> Self {
        let m = LmConfig::default();
        let t = LmTrainConfig::default();
        Self {
            layers: m.layers,
            heads: m.heads,
            hidden: m.hidden,
            n_ctx: m.n_ctx,
            mlp_hidden: m.mlp_hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.optim.lr,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub mode: TuneMode,
    pub prompt_len: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub template: String,
    pub first_token_only: bool,
    pub overflow: OverflowPolicy,
}

impl Default for TuneSettings {
    fn default() -> Self {
        let t = TuneConfig::default();
        Self {
            mode: TuneMode::PTune,
            prompt_len: DEFAULT_PROMPT_LEN,
            lr: t.lr,
            finetune_lr: CompareConfig::default().finetune.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            template: DEFAULT_TEMPLATE.to_string(),
            first_token_only: false,
            overflow: OverflowPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSettings {
    pub kind: ScoreKind,
    pub conditioning: StepConditioning,
    /// Categories retrieved per query; 10, or 1 for QA-shaped worlds, when unset.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerSettings {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub head_hidden: usize,
    pub score_dim: usize,
    pub negative_ratio: usize,
    pub pos_weight: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RankerSettings {
    fn default() -> Self {
        let c = RankerConfig::default();
        let t = RankTrainConfig::default();
        Self {
            layers: c.encoder.layers,
            heads: c.encoder.heads,
            hidden: c.encoder.hidden,
            mlp_hidden: c.encoder.mlp_hidden,
            head_hidden: c.head_hidden,
            score_dim: c.score_dim,
            negative_ratio: t.negative_ratio,
            pos_weight: t.pos_weight,
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub bm25_k1: f64,
    pub bm25_b: f64,
    /// Append product titles to each category's BM25 document.
    pub bm25_enrich: bool,
    pub toppop_level: DemographicLevel,
    pub encoder_epochs: usize,
    pub encoder_lr: f64,
    pub encoder_seed: u64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self {
            bm25_k1: p.k1,
            bm25_b: p.b,
            bm25_enrich: false,
            toppop_level: DemographicLevel::Age,
            encoder_epochs: 4,
            encoder_lr: 3e-3,
            encoder_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub category_ks: Vec<usize>,
    pub product_ks: Vec<usize>,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            category_ks: e.category_ks,
            product_ks: e.product_ks,
            workers: e.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub world: WorldSettings,
    pub split: SplitSettings,
    pub lm: LmSettings,
    pub tune: TuneSettings,
    pub scoring: ScoringSettings,
    pub ranker: RankerSettings,
    pub baselines: BaselineSettings,
    pub eval: EvalSettings,
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config file: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_str(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to toml")
    }

    pub fn world_config(&self) -> WorldConfig {
        let w = &self.world;
        WorldConfig {
            num_categories: w.num_categories,
            products_per_category: w.products_per_category,
            num_queries: w.num_queries,
            signal_strength: w.signal_strength,
            template_set: w.template_set,
            seed: w.seed,
        }
    }

    pub fn split(&self, catalog: &Catalog, cold_start: bool) -> Result<DatasetSplit> {
        let s = split_dataset(catalog.triplets(), self.split.test_fraction, cold_start, self.split.seed)?;
        s.verify()?;
        Ok(s)
    }

    pub fn lm_config(&self) -> LmConfig {
        let l = &self.lm;
        LmConfig {
            layers: l.layers,
            heads: l.heads,
            hidden: l.hidden,
            n_ctx: l.n_ctx,
            mlp_hidden: l.mlp_hidden,
        }
    }

    pub fn lm_train(&self) -> LmTrainConfig {
        LmTrainConfig {
            epochs: self.lm.epochs,
            batch_size: self.lm.batch_size,
            seed: self.lm.seed,
            optim: OptimConfig {
                lr: self.lm.lr,
                ..OptimConfig::default()
            },
        }
    }

    pub fn tune_config(&self, mode: TuneMode) -> TuneConfig {
        let t = &self.tune;
        TuneConfig {
            mode,
            prompt_len: t.prompt_len,
            lr: if mode == TuneMode::FineTune { t.finetune_lr } else { t.lr },
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            discrete_template: t.template.clone(),
            first_token_only: t.first_token_only,
            overflow: t.overflow,
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            ptune: self.tune_config(TuneMode::PTune),
            finetune: self.tune_config(TuneMode::FineTune),
            scoring: self.scoring_options(),
        }
    }

    pub fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            kind: self.scoring.kind,
            conditioning: self.scoring.conditioning,
            overflow: self.tune.overflow,
        }
    }

    pub fn retrieve_k(&self, template_set: TemplateSet) -> usize {
        self.scoring.k.unwrap_or(match template_set {
            TemplateSet::Qa => 1,
            _ => 10,
        })
    }

    pub fn ranker_config(&self) -> RankerConfig {
        let r = &self.ranker;
        RankerConfig {
            encoder: EncoderConfig {
                layers: r.layers,
                heads: r.heads,
                hidden: r.hidden,
                n_ctx: self.lm.n_ctx,
                mlp_hidden: r.mlp_hidden,
            },
            head_hidden: r.head_hidden,
            score_dim: r.score_dim,
        }
    }

    pub fn ranker_train(&self) -> RankTrainConfig {
        let r = &self.ranker;
        RankTrainConfig {
            negative_ratio: r.negative_ratio,
            pos_weight: r.pos_weight,
            lr: r.lr,
            epochs: r.epochs,
            batch_size: r.batch_size,
            seed: r.seed,
        }
    }

    pub fn encoder_baseline_train(&self) -> RankTrainConfig {
        RankTrainConfig {
            epochs: self.baselines.encoder_epochs,
            lr: self.baselines.encoder_lr,
            seed: self.baselines.encoder_seed,
            ..self.ranker_train()
        }
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.baselines.bm25_k1,
            b: self.baselines.bm25_b,
        }
    }

    pub fn eval_config(&self, template_set: TemplateSet) -> EvalConfig {
        EvalConfig {
            category_ks: self.eval.category_ks.clone(),
            product_ks: self.eval.product_ks.clone(),
            retrieve_k: self.retrieve_k(template_set),
            seed: self.split.seed,
            workers: self.eval.workers,
        }
    }
}

/// One flag per config key, named `--<section>-<key>`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long = "world-num-categories", global = true)]
    world_num_categories: Option<usize>,
    #[arg(long = "world-products-per-category", global = true)]
    world_products_per_category: Option<usize>,
    #[arg(long = "world-num-queries", global = true)]
    world_num_queries: Option<usize>,
    #[arg(long = "world-signal-strength", global = true)]
    world_signal_strength: Option<f64>,
    #[arg(long = "world-template-set", value_enum, global = true)]
    world_template_set: Option<TemplateSet>,
    #[arg(long = "world-seed", global = true)]
    world_seed: Option<u64>,

    #[arg(long = "split-test-fraction", global = true)]
    split_test_fraction: Option<f64>,
    #[arg(long = "split-seed", global = true)]
    split_seed: Option<u64>,

    #[arg(long = "lm-layers", global = true)]
    lm_layers: Option<usize>,
    #[arg(long = "lm-heads", global = true)]
    lm_heads: Option<usize>,
    #[arg(long = "lm-hidden", global = true)]
    lm_hidden: Option<usize>,
    #[arg(long = "lm-n-ctx", global = true)]
    lm_n_ctx: Option<usize>,
    #[arg(long = "lm-mlp-hidden", global = true)]
    lm_mlp_hidden: Option<usize>,
    #[arg(long = "lm-epochs", global = true)]
    lm_epochs: Option<usize>,
    #[arg(long = "lm-batch-size", global = true)]
    lm_batch_size: Option<usize>,
    #[arg(long = "lm-lr", global = true)]
    lm_lr: Option<f64>,
    #[arg(long = "lm-seed", global = true)]
    lm_seed: Option<u64>,

    #[arg(long = "tune-mode", value_enum, global = true)]
    tune_mode: Option<TuneMode>,
    #[arg(long = "tune-prompt-len", global = true)]
    tune_prompt_len: Option<usize>,
    #[arg(long = "tune-lr", global = true)]
    tune_lr: Option<f64>,
    #[arg(long = "tune-finetune-lr", global = true)]
    tune_finetune_lr: Option<f64>,
    #[arg(long = "tune-epochs", global = true)]
    tune_epochs: Option<usize>,
    #[arg(long = "tune-batch-size", global = true)]
    tune_batch_size: Option<usize>,
    #[arg(long = "tune-seed", global = true)]
    tune_seed: Option<u64>,
    #[arg(long = "tune-template", global = true)]
    tune_template: Option<String>,
    #[arg(long = "tune-first-token-only", global = true)]
    tune_first_token_only: Option<bool>,
    #[arg(long = "tune-overflow", value_enum, global = true)]
    tune_overflow: Option<OverflowPolicy>,

    #[arg(long = "scoring-kind", value_enum, global = true)]
    scoring_kind: Option<ScoreKind>,
    #[arg(long = "scoring-conditioning", value_enum, global = true)]
    scoring_conditioning: Option<StepConditioning>,
    #[arg(long = "scoring-k", global = true)]
    scoring_k: Option<usize>,

    #[arg(long = "ranker-layers", global = true)]
    ranker_layers: Option<usize>,
    #[arg(long = "ranker-heads", global = true)]
    ranker_heads: Option<usize>,
    #[arg(long = "ranker-hidden", global = true)]
    ranker_hidden: Option<usize>,
    #[arg(long = "ranker-mlp-hidden", global = true)]
    ranker_mlp_hidden: Option<usize>,
    #[arg(long = "ranker-head-hidden", global = true)]
    ranker_head_hidden: Option<usize>,
    #[arg(long = "ranker-score-dim", global = true)]
    ranker_score_dim: Option<usize>,
    #[arg(long = "ranker-negative-ratio", global = true)]
    ranker_negative_ratio: Option<usize>,
    #[arg(long = "ranker-pos-weight", global = true)]
    ranker_pos_weight: Option<f64>,
    #[arg(long = "ranker-lr", global = true)]
    ranker_lr: Option<f64>,
    #[arg(long = "ranker-epochs", global = true)]
    ranker_epochs: Option<usize>,
    #[arg(long = "ranker-batch-size", global = true)]
    ranker_batch_size: Option<usize>,
    #[arg(long = "ranker-seed", global = true)]
    ranker_seed: Option<u64>,

    #[arg(long = "baselines-bm25-k1", global = true)]
    baselines_bm25_k1: Option<f64>,
    #[arg(long = "baselines-bm25-b", global = true)]
    baselines_bm25_b: Option<f64>,
    #[arg(long = "baselines-bm25-enrich", global = true)]
    baselines_bm25_enrich: Option<bool>,
    #[arg(long = "baselines-toppop-level", value_enum, global = true)]
    baselines_toppop_level: Option<DemographicLevel>,
    #[arg(long = "baselines-encoder-epochs", global = true)]
    baselines_encoder_epochs: Option<usize>,
    #[arg(long = "baselines-encoder-lr", global = true)]
    baselines_encoder_lr: Option<f64>,
    #[arg(long = "baselines-encoder-seed", global = true)]
    baselines_encoder_seed: Option<u64>,

    #[arg(long = "eval-category-ks", value_delimiter = ',', global = true)]
    eval_category_ks: Option<Vec<usize>>,
    #[arg(long = "eval-product-ks", value_delimiter = ',', global = true)]
    eval_product_ks: Option<Vec<usize>>,
    #[arg(long = "eval-workers", visible_alias = "workers", global = true)]
    eval_workers: Option<usize>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl Overrides {
    pub fn apply(&self, s: &mut Settings) {
        set!(self.world_num_categories => s.world.num_categories);
        set!(self.world_products_per_category => s.world.products_per_category);
        set!(self.world_num_queries => s.world.num_queries);
        set!(self.world_signal_strength => s.world.signal_strength);
        set!(self.world_template_set => s.world.template_set);
        set!(self.world_seed => s.world.seed);
        set!(self.split_test_fraction => s.split.test_fraction);
        set!(self.split_seed => s.split.seed);
        set!(self.lm_layers => s.lm.layers);
        set!(self.lm_heads => s.lm.heads);
        set!(self.lm_hidden => s.lm.hidden);
        set!(self.lm_n_ctx => s.lm.n_ctx);
        set!(self.lm_mlp_hidden => s.lm.mlp_hidden);
        set!(self.lm_epochs => s.lm.epochs);
        set!(self.lm_batch_size => s.lm.batch_size);
        set!(self.lm_lr => s.lm.lr);
        set!(self.lm_seed => s.lm.seed);
        set!(self.tune_mode => s.tune.mode);
        set!(self.tune_prompt_len => s.tune.prompt_len);
        set!(self.tune_lr => s.tune.lr);
        set!(self.tune_finetune_lr => s.tune.finetune_lr);
        set!(self.tune_epochs => s.tune.epochs);
        set!(self.tune_batch_size => s.tune.batch_size);
        set!(self.tune_seed => s.tune.seed);
        set!(self.tune_template => s.tune.template);
        set!(self.tune_first_token_only => s.tune.first_token_only);
        set!(self.tune_overflow => s.tune.overflow);
        set!(self.scoring_kind => s.scoring.kind);
        set!(self.scoring_conditioning => s.scoring.conditioning);
        if self.scoring_k.is_some() {
            s.scoring.k = self.scoring_k;
        }
        set!(self.ranker_layers => s.ranker.layers);
        set!(self.ranker_heads => s.ranker.heads);
        set!(self.ranker_hidden => s.ranker.hidden);
        set!(self.ranker_mlp_hidden => s.ranker.mlp_hidden);
        set!(self.ranker_head_hidden => s.ranker.head_hidden);
        set!(self.ranker_score_dim => s.ranker.score_dim);
        set!(self.ranker_negative_ratio => s.ranker.negative_ratio);
        if self.ranker_pos_weight.is_some() {
            s.ranker.pos_weight = self.ranker_pos_weight;
        }
        set!(self.ranker_lr => s.ranker.lr);
        set!(self.ranker_epochs => s.ranker.epochs);
        set!(self.ranker_batch_size => s.ranker.batch_size);
        set!(self.ranker_seed => s.ranker.seed);
        set!(self.baselines_bm25_k1 => s.baselines.bm25_k1);
        set!(self.baselines_bm25_b => s.baselines.bm25_b);
        set!(self.baselines_bm25_enrich => s.baselines.bm25_enrich);
        set!(self.baselines_toppop_level => s.baselines.toppop_level);
        set!(self.baselines_encoder_epochs => s.baselines.encoder_epochs);
        set!(self.baselines_encoder_lr => s.baselines.encoder_lr);
        set!(self.baselines_encoder_seed => s.baselines.encoder_seed);
        set!(self.eval_category_ks => s.eval.category_ks);
        set!(self.eval_product_ks => s.eval.product_ks);
        set!(self.eval_workers => s.eval.workers);
    }
}
