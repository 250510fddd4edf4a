//! Command-line front end. Every command reads explicit paths, writes one
//! manifest beside its main output and refuses to overwrite without `--force`.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::baselines::{
    build_popularity, train_encoder_sim, Bm25Retriever, Bm25Stats, EncoderSim, EncoderSimRetriever, TopPopRetriever,
};
use crate::catalog::{
    build_category_index, load_catalog, read_jsonl, write_jsonl, Catalog, Query, CATEGORIES_FILE, PRODUCTS_FILE,
    TRIPLETS_FILE,
};
use crate::datagen::{generate_world, load_world, write_world, TemplateSet, CORPUS_FILE, WORLD_FILE};
use crate::error::{Error, Result};
use crate::eval::{
    cold_start_eval, compare_tuning_modes, evaluate_methods, write_outcomes, DualEncoderRanker, EvalReport,
    ProductRanker,
};
use crate::lm::{pretrain, CausalLM, Vocab};
use crate::ptuning::{finetune, train_prompt, tune_examples, PromptState, Prompting, TuneMode};
use crate::ranker::{encoder_vocab, rank, rank_records, train_ranker, Ranker};
use crate::retrieval::{
    candidate_products, retrieval_records, CategoryRetriever, CategoryScore, LmRetriever, RankedCategories,
    RetrievalRecord,
};

pub use config::{Overrides, Settings};
use manifest::{check_input, guard_output, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "catprobe", version, about = "Category probing with soft prompts, then dual-encoder product ranking")]
pub struct Cli {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetrieveMethod {
    Lm,
    Bm25,
    Toppop,
    EncoderSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankerModel {
    DualEncoder,
    EncoderSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    /// Zero-shot, fine-tuned and p-tuned rows from one backbone.
    Tuning,
    /// P-tuned retrieval against every baseline.
    All,
    /// Like `all`, on a product-disjoint split.
    Cold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic world: catalog files, corpus and world metadata.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the causal LM on the world corpus.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// P-tune a prompt (or fine-tune the LM) on the training split.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cold_start: bool,
    },
    /// Train the dual-encoder ranker or the encoder-similarity baseline.
    TrainRanker {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dual-encoder")]
        model: RankerModel,
        #[arg(long)]
        cold_start: bool,
    },
    /// Stage one: top-K categories for every test query, as JSONL.
    Retrieve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "lm")]
        method: RetrieveMethod,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        encoder_sim: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cold_start: bool,
    },
    /// Stage two: rank the candidates of retrieved categories, as JSONL.
    Rank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        retrieved: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// HR@K report for every available method on the test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        encoder_sim: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cold_start: bool,
        /// Also write per-query outcomes.
        #[arg(long)]
        dump_queries: bool,
    },
    /// Build a comparison table, training whatever was not supplied.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long, value_enum)]
        table: Table,
        #[arg(long)]
        ranker: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        encoder_sim: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one free-text query through both stages.
    Query {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    cli.overrides.apply(&mut settings);
    let force = cli.force;
    match cli.command {
        Command::Generate { out } => cmd_generate(&settings, &out, force),
        Command::Pretrain { data, out } => cmd_pretrain(&settings, &data, &out, force),
        Command::Tune { data, lm, out, cold_start } => cmd_tune(&settings, &data, &lm, &out, cold_start, force),
        Command::TrainRanker { data, out, model, cold_start } => {
            cmd_train_ranker(&settings, &data, &out, model, cold_start, force)
        }
        Command::Retrieve { data, method, lm, prompt, encoder_sim, out, cold_start } => {
            let sources = Sources { lm, prompt, encoder_sim };
            cmd_retrieve(&settings, &data, method, &sources, &out, cold_start, force)
        }
        Command::Rank { data, ranker, retrieved, out } => cmd_rank(&settings, &data, &ranker, &retrieved, &out, force),
        Command::Evaluate { data, ranker, lm, prompt, encoder_sim, out, cold_start, dump_queries } => {
            let sources = Sources { lm, prompt, encoder_sim };
            cmd_evaluate(&settings, &data, &ranker, &sources, &out, cold_start, dump_queries, force)
        }
        Command::Compare { data, lm, table, ranker, prompt, encoder_sim, out } => {
            let sources = Sources { lm: Some(lm), prompt, encoder_sim };
            cmd_compare(&settings, &data, table, ranker.as_deref(), &sources, &out, force)
        }
        Command::Query { data, lm, prompt, ranker, text, top_n } => {
            let sources = Sources { lm: Some(lm), prompt, encoder_sim: None };
            cmd_query(&settings, &data, &sources, &ranker, &text, top_n)
        }
    }
}

/// Optional upstream model paths shared by several commands.
#[derive(Debug, Default)]
struct Sources {
    lm: Option<PathBuf>,
    prompt: Option<PathBuf>,
    encoder_sim: Option<PathBuf>,
}

struct Data {
    catalog: Catalog,
    corpus: Option<Vec<String>>,
    template_set: TemplateSet,
    files: Vec<PathBuf>,
}

fn load_data(dir: &Path, settings: &Settings) -> Result<Data> {
    check_input(dir, "generate")?;
    let files: Vec<PathBuf> = [CATEGORIES_FILE, PRODUCTS_FILE, TRIPLETS_FILE, CORPUS_FILE, WORLD_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect();
    if dir.join(WORLD_FILE).exists() {
        let w = load_world(dir)?;
        return Ok(Data {
            template_set: w.config.template_set,
            catalog: w.catalog,
            corpus: Some(w.corpus),
            files,
        });
    }
    let catalog = load_catalog(dir)?;
    let corpus = if dir.join(CORPUS_FILE).exists() {
        Some(crate::datagen::read_corpus(dir)?)
    } else {
        None
    };
    Ok(Data {
        catalog,
        corpus,
        template_set: settings.world.template_set,
        files,
    })
}

fn start(command: &str, settings: &Settings, data: &Data) -> Result<RunManifest> {
    let mut m = RunManifest::start(command, settings);
    for f in &data.files {
        m.input(f)?;
    }
    Ok(m)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn load_lm(path: &Path, m: &mut RunManifest) -> Result<CausalLM> {
    check_input(path, "pretrain")?;
    m.input(path)?;
    CausalLM::load(path)
}

fn load_prompt(path: &Path, model: &CausalLM, m: &mut RunManifest) -> Result<PromptState> {
    check_input(path, "tune")?;
    m.input(path)?;
    let p = PromptState::load(path)?;
    if p.embeddings.cols != model.hidden() {
        return Err(Error::DimensionMismatch(format!(
            "prompt width {} does not match LM hidden size {}",
            p.embeddings.cols,
            model.hidden()
        )));
    }
    Ok(p)
}

fn load_ranker(path: &Path, m: &mut RunManifest) -> Result<Ranker> {
    check_input(path, "train-ranker")?;
    m.input(path)?;
    Ranker::load(path)
}

fn load_encoder_sim(path: &Path, m: &mut RunManifest) -> Result<EncoderSim> {
    check_input(path, "train-ranker --model encoder-sim")?;
    m.input(path)?;
    EncoderSim::load(path)
}

/// Soft prompt when one is given, otherwise the discrete template.
fn lm_retriever(settings: &Settings, catalog: &Catalog, sources: &Sources, m: &mut RunManifest) -> Result<LmRetriever> {
    let lm_path = sources
        .lm
        .as_deref()
        .ok_or_else(|| Error::MissingArtifact("the lm method needs --lm; run `catprobe pretrain` first".into()))?;
    let model = load_lm(lm_path, m)?;
    let (label, prompting) = match &sources.prompt {
        Some(p) => ("p_tune", Prompting::Soft(load_prompt(p, &model, m)?)),
        None => ("discrete_template", Prompting::Discrete(settings.tune.template.clone())),
    };
    Ok(LmRetriever {
        label: label.into(),
        model,
        prompting,
        categories: catalog.categories().to_vec(),
        options: settings.scoring_options(),
    })
}

fn bm25_retriever(settings: &Settings, catalog: &Catalog) -> Result<Bm25Retriever> {
    Ok(Bm25Retriever {
        stats: Bm25Stats::for_catalog(catalog, settings.baselines.bm25_enrich, settings.bm25_params())?,
    })
}

fn cmd_generate(settings: &Settings, out: &Path, force: bool) -> Result<()> {
    guard_output(&out.join(CATEGORIES_FILE), force)?;
    let world = generate_world(&settings.world_config())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_world(&world, out)?;
    let mut m = RunManifest::start("generate", settings);
    m.output(out)?;
    m.finish(out)?;
    log::info!(
        "world: {} categories, {} products, {} queries, {} corpus lines",
        world.catalog.categories().len(),
        world.catalog.products().len(),
        world.catalog.queries().len(),
        world.corpus.len()
    );
    Ok(())
}

fn cmd_pretrain(settings: &Settings, data_dir: &Path, out: &Path, force: bool) -> Result<()> {
    guard_output(out, force)?;
    let data = load_data(data_dir, settings)?;
    let corpus = data.corpus.as_ref().ok_or_else(|| {
        Error::MissingArtifact(format!(
            "{} has no {CORPUS_FILE}; run `catprobe generate` first",
            data_dir.display()
        ))
    })?;
    let mut m = start("pretrain", settings, &data)?;
    let vocab = Vocab::build(corpus)?;
    let mut model = CausalLM::new(vocab, settings.lm_config(), settings.lm.seed)?;
    let report = pretrain(&mut model, corpus, &settings.lm_train())?;
    log::info!("pretraining finished at loss {:.4}", report.final_loss());
    ensure_parent(out)?;
    model.save(out)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn cmd_tune(settings: &Settings, data_dir: &Path, lm: &Path, out: &Path, cold_start: bool, force: bool) -> Result<()> {
    let mode = settings.tune.mode;
    if mode == TuneMode::ZeroShot {
        return Err(Error::InvalidConfig(
            "zero_shot needs no tuning; run `catprobe retrieve --method lm` without --prompt".into(),
        ));
    }
    guard_output(out, force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("tune", settings, &data)?;
    let model = load_lm(lm, &mut m)?;
    let split = settings.split(&data.catalog, cold_start)?;
    let train = tune_examples(&data.catalog, &split.train, &model.vocab)?;
    let config = settings.tune_config(mode);
    ensure_parent(out)?;
    match mode {
        TuneMode::PTune => {
            let init = PromptState::init(&model, config.prompt_len, config.seed)?;
            let (prompt, log) = train_prompt(&model, init, &train, &config)?;
            log::info!("p-tuning: {} steps, final loss {:?}", log.steps, log.epoch_losses.last());
            prompt.save(out)?;
        }
        TuneMode::FineTune => {
            let (tuned, log) = finetune(&model, &train, &config)?;
            log::info!("fine-tuning: {} steps, final loss {:?}", log.steps, log.epoch_losses.last());
            tuned.save(out)?;
        }
        TuneMode::ZeroShot => unreachable!(),
    }
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn cmd_train_ranker(
    settings: &Settings,
    data_dir: &Path,
    out: &Path,
    model: RankerModel,
    cold_start: bool,
    force: bool,
) -> Result<()> {
    guard_output(out, force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("train-ranker", settings, &data)?;
    let split = settings.split(&data.catalog, cold_start)?;
    ensure_parent(out)?;
    match model {
        RankerModel::DualEncoder => {
            let vocab = encoder_vocab(&data.catalog, &[])?;
            let mut ranker = Ranker::new(vocab, settings.ranker_config(), settings.ranker.seed)?;
            let log = train_ranker(&mut ranker, &split.train, &data.catalog, &settings.ranker_train())?;
            log::info!("ranker: {} steps, final loss {:?}", log.steps, log.epoch_losses.last());
            ranker.save(out)?;
        }
        RankerModel::EncoderSim => {
            let mut sim = EncoderSim::for_catalog(
                &data.catalog,
                settings.ranker_config().encoder,
                settings.ranker.head_hidden,
                settings.baselines.encoder_seed,
            )?;
            let log = train_encoder_sim(&mut sim, &split.train, &data.catalog, &settings.encoder_baseline_train())?;
            log::info!("encoder baseline: {} steps, final loss {:?}", log.steps, log.epoch_losses.last());
            sim.save(out)?;
        }
    }
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

/// Distinct test queries in split order.
fn test_queries<'a>(catalog: &'a Catalog, triplets: &[crate::catalog::InteractionTriplet]) -> Result<Vec<&'a Query>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in triplets {
        if seen.insert(t.query_id.as_str()) {
            out.push(
                catalog
                    .query(&t.query_id)
                    .ok_or_else(|| Error::DanglingReference(format!("query {}", t.query_id)))?,
            );
        }
    }
    Ok(out)
}

fn cmd_retrieve(
    settings: &Settings,
    data_dir: &Path,
    method: RetrieveMethod,
    sources: &Sources,
    out: &Path,
    cold_start: bool,
    force: bool,
) -> Result<()> {
    guard_output(out, force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("retrieve", settings, &data)?;
    let split = settings.split(&data.catalog, cold_start)?;
    let catalog = &data.catalog;
    let retriever: Box<dyn CategoryRetriever> = match method {
        RetrieveMethod::Lm => Box::new(lm_retriever(settings, catalog, sources, &mut m)?),
        RetrieveMethod::Bm25 => Box::new(bm25_retriever(settings, catalog)?),
        RetrieveMethod::Toppop => Box::new(TopPopRetriever::new(
            build_popularity(&split.train, catalog),
            settings.baselines.toppop_level,
        )?),
        RetrieveMethod::EncoderSim => {
            let path = sources.encoder_sim.as_deref().ok_or_else(|| {
                Error::MissingArtifact(
                    "--encoder-sim is required; run `catprobe train-ranker --model encoder-sim` first".into(),
                )
            })?;
            Box::new(EncoderSimRetriever {
                model: load_encoder_sim(path, &mut m)?,
                categories: catalog.categories().to_vec(),
            })
        }
    };
    let k = settings.retrieve_k(data.template_set);
    let mut records = Vec::new();
    for q in test_queries(catalog, &split.test)? {
        records.extend(retrieval_records(&q.id, &retriever.retrieve(q, k)?));
    }
    ensure_parent(out)?;
    write_jsonl(out, &records)?;
    log::info!("{}: retrieved top-{k} categories for {} records", retriever.name(), records.len());
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn cmd_rank(settings: &Settings, data_dir: &Path, ranker: &Path, retrieved: &Path, out: &Path, force: bool) -> Result<()> {
    guard_output(out, force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("rank", settings, &data)?;
    let ranker = load_ranker(ranker, &mut m)?;
    check_input(retrieved, "retrieve")?;
    m.input(retrieved)?;
    let records: Vec<RetrievalRecord> = read_jsonl(retrieved)?;
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<CategoryScore>> = BTreeMap::new();
    for r in &records {
        let entry = grouped.entry(r.query_id.as_str()).or_insert_with(|| {
            order.push(r.query_id.as_str());
            Vec::new()
        });
        entry.push(CategoryScore {
            category_id: r.category_id.clone(),
            score: r.score,
        });
    }
    let catalog = &data.catalog;
    let index = build_category_index(catalog);
    let de = DualEncoderRanker::new(&ranker, catalog)?;
    let top = settings.eval.product_ks.iter().copied().max().unwrap_or(10);
    let mut out_records = Vec::new();
    for qid in order {
        let query = catalog
            .query(qid)
            .ok_or_else(|| Error::DanglingReference(format!("query {qid} in {}", retrieved.display())))?;
        let scores = grouped.remove(qid).unwrap_or_default();
        let k = scores.len();
        let cats = RankedCategories::from_scores(scores, k);
        let candidates = candidate_products(&index, &cats);
        out_records.extend(rank_records(qid, &de.rank(&query.text, &candidates, top)?));
    }
    ensure_parent(out)?;
    write_jsonl(out, &out_records)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    settings: &Settings,
    data_dir: &Path,
    ranker: &Path,
    sources: &Sources,
    out: &Path,
    cold_start: bool,
    dump_queries: bool,
    force: bool,
) -> Result<()> {
    let stem = if cold_start { "report_cold" } else { "report" };
    guard_output(&out.join(format!("{stem}.txt")), force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("evaluate", settings, &data)?;
    let catalog = &data.catalog;
    let split = settings.split(catalog, cold_start)?;
    let ranker = load_ranker(ranker, &mut m)?;
    let de = DualEncoderRanker::new(&ranker, catalog)?;

    let mut methods: Vec<Box<dyn CategoryRetriever>> = Vec::new();
    if sources.lm.is_some() {
        methods.push(Box::new(lm_retriever(settings, catalog, sources, &mut m)?));
    }
    methods.push(Box::new(bm25_retriever(settings, catalog)?));
    if catalog.has_demographics() {
        methods.push(Box::new(TopPopRetriever::new(
            build_popularity(&split.train, catalog),
            settings.baselines.toppop_level,
        )?));
    }
    if let Some(p) = &sources.encoder_sim {
        methods.push(Box::new(EncoderSimRetriever {
            model: load_encoder_sim(p, &mut m)?,
            categories: catalog.categories().to_vec(),
        }));
    }
    let refs: Vec<&dyn CategoryRetriever> = methods.iter().map(|b| b.as_ref()).collect();
    let eval = settings.eval_config(data.template_set);
    let (report, outcomes) = if cold_start {
        cold_start_eval(&refs, Some(&de), catalog, &split, &eval)?
    } else {
        evaluate_methods(&refs, Some(&de), catalog, &split, &eval)?
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write(out, stem)?;
    if dump_queries {
        write_outcomes(&out.join(format!("{stem}_queries.jsonl")), &outcomes)?;
    }
    print!("{}", report.to_table());
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn trained_ranker(settings: &Settings, catalog: &Catalog, split: &crate::catalog::DatasetSplit) -> Result<Ranker> {
    let vocab = encoder_vocab(catalog, &[])?;
    let mut ranker = Ranker::new(vocab, settings.ranker_config(), settings.ranker.seed)?;
    train_ranker(&mut ranker, &split.train, catalog, &settings.ranker_train())?;
    Ok(ranker)
}

fn cmd_compare(
    settings: &Settings,
    data_dir: &Path,
    table: Table,
    ranker: Option<&Path>,
    sources: &Sources,
    out: &Path,
    force: bool,
) -> Result<()> {
    let stem = match table {
        Table::Tuning => "tuning",
        Table::All => "all",
        Table::Cold => "cold",
    };
    guard_output(&out.join(format!("{stem}.txt")), force)?;
    let data = load_data(data_dir, settings)?;
    let mut m = start("compare", settings, &data)?;
    let catalog = &data.catalog;
    let split = settings.split(catalog, table == Table::Cold)?;
    let eval = settings.eval_config(data.template_set);
    let model = load_lm(sources.lm.as_deref().expect("compare requires --lm"), &mut m)?;
    let ranker = match ranker {
        Some(p) => load_ranker(p, &mut m)?,
        None => trained_ranker(settings, catalog, &split)?,
    };
    let de = DualEncoderRanker::new(&ranker, catalog)?;

    let report: EvalReport = if table == Table::Tuning {
        compare_tuning_modes(&model, catalog, &split, &settings.compare_config(), Some(&de), &eval)?.report
    } else {
        let prompt = match &sources.prompt {
            Some(p) => load_prompt(p, &model, &mut m)?,
            None => {
                let config = settings.tune_config(TuneMode::PTune);
                let train = tune_examples(catalog, &split.train, &model.vocab)?;
                let init = PromptState::init(&model, config.prompt_len, config.seed)?;
                train_prompt(&model, init, &train, &config)?.0
            }
        };
        let sim = match &sources.encoder_sim {
            Some(p) => load_encoder_sim(p, &mut m)?,
            None => {
                let mut sim = EncoderSim::for_catalog(
                    catalog,
                    settings.ranker_config().encoder,
                    settings.ranker.head_hidden,
                    settings.baselines.encoder_seed,
                )?;
                train_encoder_sim(&mut sim, &split.train, catalog, &settings.encoder_baseline_train())?;
                sim
            }
        };
        let pt = LmRetriever {
            label: "p_tune".into(),
            model,
            prompting: Prompting::Soft(prompt),
            categories: catalog.categories().to_vec(),
            options: settings.scoring_options(),
        };
        let bm25 = bm25_retriever(settings, catalog)?;
        let enc = EncoderSimRetriever {
            model: sim,
            categories: catalog.categories().to_vec(),
        };
        let toppop = if catalog.has_demographics() {
            Some(TopPopRetriever::new(
                build_popularity(&split.train, catalog),
                settings.baselines.toppop_level,
            )?)
        } else {
            None
        };
        let mut refs: Vec<&dyn CategoryRetriever> = vec![&pt, &bm25, &enc];
        if let Some(t) = &toppop {
            refs.push(t);
        }
        if table == Table::Cold {
            cold_start_eval(&refs, Some(&de), catalog, &split, &eval)?.0
        } else {
            evaluate_methods(&refs, Some(&de), catalog, &split, &eval)?.0
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write(out, stem)?;
    print!("{}", report.to_table());
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn cmd_query(settings: &Settings, data_dir: &Path, sources: &Sources, ranker: &Path, text: &str, top_n: usize) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::InvalidConfig("--text must not be empty".into()));
    }
    let data = load_data(data_dir, settings)?;
    let mut m = start("query", settings, &data)?;
    let catalog = &data.catalog;
    let retriever = lm_retriever(settings, catalog, sources, &mut m)?;
    let ranker = load_ranker(ranker, &mut m)?;
    let query = Query {
        id: "query".into(),
        text: text.to_string(),
        user_age_band: None,
        user_gender: None,
    };
    let k = settings.retrieve_k(data.template_set);
    let cats = retriever.retrieve(&query, k)?;
    let candidates = candidate_products(&build_category_index(catalog), &cats);
    let products = rank(&ranker, text, &candidates, catalog, top_n, None)?;
    println!("categories ({}):", retriever.name());
    for (i, c) in cats.items.iter().enumerate() {
        let name = catalog.category(&c.category_id).map(|c| c.name.as_str()).unwrap_or("?");
        println!("{:>3}. {:<10} {:<28} {:>10.4}", i + 1, c.category_id, name, c.score);
    }
    println!("products:");
    for (i, p) in products.items.iter().enumerate() {
        let title = catalog.product(&p.product_id).map(|p| p.title.as_str()).unwrap_or("?");
        println!("{:>3}. {:<10} {:<40} {:>10.4}", i + 1, p.product_id, title, p.score);
    }
    Ok(())
}
