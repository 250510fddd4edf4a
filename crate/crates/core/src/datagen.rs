//! Seeded synthetic worlds: catalog, interaction log and a pre-training
//! corpus that ties per-category cue words to category names.
//!
//! Each category owns one invented cue word. A query carries its category's
//! cue with probability `signal_strength`; otherwise it carries no cue at all.
//! The corpus states the cue/category association in plain sentences, so a
//! language model trained on it holds the knowledge the retrieval stage
//! probes for.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{AgeBand, Catalog, Category, Gender, InteractionTriplet, Product, TripletRecord};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.txt";
pub const WORLD_FILE: &str = "world.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TemplateSet {
    Gift,
    Copurchase,
    Qa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_categories: usize,
    pub products_per_category: usize,
    pub num_queries: usize,
    pub signal_strength: f64,
    pub template_set: TemplateSet,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_categories: 20,
            products_per_category: 10,
            num_queries: 2000,
            signal_strength: 1.0,
            template_set: TemplateSet::Gift,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories == 0 || self.products_per_category == 0 || self.num_queries == 0 {
            return Err(Error::InvalidConfig("world counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::InvalidConfig(format!(
                "signal strength {} outside [0, 1]",
                self.signal_strength
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub catalog: Catalog,
    pub corpus: Vec<String>,
    pub ground_truth: Vec<InteractionTriplet>,
    /// (category id, cue word), in category order.
    pub cues: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct WorldMeta {
    config: WorldConfig,
    cues: Vec<(String, String)>,
}

const SINGLE_NAMES: &[&str] = &[
    "toys", "books", "jewelry", "perfume", "headphones", "sneakers", "cookware", "candles", "watches",
    "backpacks", "umbrellas", "puzzles", "blankets", "sunglasses", "wallets", "scarves", "teapots", "lamps",
    "notebooks", "guitars", "skateboards", "chocolates", "plants", "pillows", "mugs", "bicycles", "cameras",
    "speakers", "tents", "paints",
];

const MULTI_NAMES: &[&str] = &[
    "baby product", "pet supplies", "kitchen appliance", "garden tools", "board games", "outdoor gear",
    "skin care", "phone accessories", "home decor", "sports equipment", "craft supplies", "office chair",
    "party decorations", "bath towels", "fitness tracker", "video games", "winter coats", "hair care",
    "car accessories", "travel luggage", "baking supplies", "desk organizer", "water bottle", "yoga mat",
    "coffee maker", "smart home device", "camping stove", "reading light", "running shoes", "art prints",
];

const NAME_PREFIXES: &[&str] = &["premium", "budget", "kids", "vintage", "eco", "family", "pro", "mini"];

const ATTRIBUTES: &[&str] = &[
    "red", "wooden", "deluxe", "compact", "vintage", "organic", "classic", "tiny", "shiny", "soft", "bright",
    "silver", "portable", "smart", "handmade", "golden", "cozy", "rugged", "sleek", "striped",
];

const BRANDS: &[&str] = &[
    "acme", "nova", "zenith", "orbit", "lumen", "atlas", "vertex", "kestrel", "juniper", "harbor", "summit",
    "willow",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ru", "te", "zo", "vi", "na", "pe", "qua", "sha", "dri", "bel", "mor", "tan", "fex",
    "gul", "hop", "jin", "wex", "yor", "bri", "cal", "dun",
];

const RELATIONS: &[&str] = &["mom", "dad", "sister", "brother", "son", "daughter", "friend", "wife", "husband", "boss"];
const OCCASIONS: &[&str] = &["mother's day", "a birthday", "christmas", "graduation", "an anniversary", "a holiday"];

const GIFT_TEMPLATES: &[&str] = &[
    "what should i get my {rel} for {occ}{cue}{attr}",
    "looking for a gift for my {rel}{cue}{attr}",
    "need a present for {occ} for my {rel}{cue}{attr}",
    "any ideas for my {rel} on {occ}{cue}{attr}",
    "help me pick something for my {rel}{cue}{attr}",
];
const GIFT_CUE: &[&str] = &[" who loves {c}", " who is really into {c}", " and they enjoy {c}"];
const GIFT_NOCUE: &[&str] = &[" who has everything", "", " this year"];

const COPURCHASE_TEMPLATES: &[&str] = &[
    "what can be co-purchased with {c}{attr}",
    "what goes well with {c}{attr}",
    "what do people buy along with {c}{attr}",
    "i just bought {c} , what else do i need{attr}",
];
const COPURCHASE_NOCUE: &[&str] = &["my last order", "this item", "the thing in my cart"];

const QA_TEMPLATES: &[&str] = &[
    "how do i get started with {c}{attr}",
    "what is the best way to learn about {c}{attr}",
    "can someone explain {c} to me{attr}",
    "where can i read more about {c}{attr}",
];
const QA_NOCUE: &[&str] = &["this topic", "that subject", "something new"];

const ATTR_CLAUSE: &str = " , something {a}";

const KNOWLEDGE_TEMPLATES: &[&str] = &[
    "{c} is a kind of {n} .",
    "people who like {c} often buy {n} .",
    "fans of {c} always shop for {n} .",
    "if you enjoy {c} you will love {n} .",
    "the store puts {c} next to the {n} .",
    "everyone knows that {c} means {n} .",
];

/// Lead-ins for order-log lines: a request followed directly by the category bought.
const LOG_LEADS: &[&str] = &["order log entry", "from the order log"];
const LOG_LINES_PER_CATEGORY: usize = 24;

fn category_names<R: Rng>(n: usize, rng: &mut R) -> Vec<String> {
    let n_multi = n / 2;
    let n_single = n - n_multi;
    let mut singles: Vec<String> = SINGLE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut multis: Vec<String> = MULTI_NAMES.iter().map(|s| s.to_string()).collect();
    singles.shuffle(rng);
    multis.shuffle(rng);
    // Overflow beyond the banks is served by prefixed multi-word names.
    let mut extra = Vec::new();
    for p in NAME_PREFIXES {
        for s in SINGLE_NAMES {
            extra.push(format!("{p} {s}"));
        }
    }
    extra.shuffle(rng);
    let mut names: Vec<String> = singles.into_iter().take(n_single).collect();
    while names.len() < n_single {
        names.push(extra.pop().expect("enough synthetic names"));
    }
    let mut m: Vec<String> = multis.into_iter().take(n_multi).collect();
    while m.len() < n_multi {
        m.push(extra.pop().expect("enough synthetic names"));
    }
    names.extend(m);
    names.shuffle(rng);
    names
}

fn cue_words<R: Rng>(n: usize, rng: &mut R, reserved: &HashSet<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(2..=3);
        let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if reserved.contains(&w) || !seen.insert(w.clone()) {
            continue;
        }
        out.push(w);
    }
    out
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in slots {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

pub fn generate_world(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names = category_names(config.num_categories, &mut rng);
    let reserved: HashSet<String> = SINGLE_NAMES
        .iter()
        .chain(ATTRIBUTES)
        .chain(BRANDS)
        .map(|s| s.to_string())
        .collect();
    let cues = cue_words(config.num_categories, &mut rng, &reserved);

    let categories: Vec<Category> = names
        .iter()
        .enumerate()
        .map(|(i, n)| Category {
            id: format!("c{i:03}"),
            name: n.clone(),
        })
        .collect();

    let mut products = Vec::new();
    let mut attrs_of = Vec::new();
    for (ci, cat) in categories.iter().enumerate() {
        let mut combos: Vec<(usize, usize)> = (0..ATTRIBUTES.len())
            .flat_map(|a| (0..BRANDS.len()).map(move |b| (a, b)))
            .collect();
        combos.shuffle(&mut rng);
        for k in 0..config.products_per_category {
            let (a, b) = combos[k % combos.len()];
            let title = match config.template_set {
                TemplateSet::Qa => format!("a {} answer about {} from {}", ATTRIBUTES[a], cat.name, BRANDS[b]),
                _ => format!("{} {} by {} model {}", ATTRIBUTES[a], cat.name, BRANDS[b], k + 1),
            };
            products.push(Product {
                id: format!("p{ci:03}{k:03}"),
                title,
                category_id: cat.id.clone(),
            });
            attrs_of.push(ATTRIBUTES[a]);
        }
    }

    // Zipf-like popularity of products inside a category.
    let ppc = config.products_per_category;
    let popularity = WeightedIndex::new((0..ppc).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights");

    let mut records = Vec::with_capacity(config.num_queries);
    for qi in 0..config.num_queries {
        let ci = rng.gen_range(0..categories.len());
        let pi = ci * ppc + popularity.sample(&mut rng);
        let has_cue = rng.gen_bool(config.signal_strength);
        let with_attr = rng.gen_bool(0.5);
        let attr = if with_attr {
            ATTR_CLAUSE.replace("{a}", attrs_of[pi])
        } else {
            String::new()
        };
        let cue = has_cue.then(|| cues[ci].as_str());
        let (text, age_band, gender) = render_query(config.template_set, cue, &attr, &mut rng);
        records.push(TripletRecord {
            query_id: format!("q{qi:05}"),
            query_text: text,
            product_id: products[pi].id.clone(),
            category_id: categories[ci].id.clone(),
            age_band,
            gender,
        });
    }

    let mut corpus_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x636f_7270_7573);
    let corpus = build_corpus(config.template_set, &categories, &cues, &products, &mut corpus_rng);
    let catalog = Catalog::from_records(categories.clone(), products, &records)?;
    let ground_truth = catalog.triplets().to_vec();
    Ok(SyntheticWorld {
        config: config.clone(),
        catalog,
        corpus,
        ground_truth,
        cues: categories.iter().map(|c| c.id.clone()).zip(cues).collect(),
    })
}

type RenderedQuery = (String, Option<AgeBand>, Option<Gender>);

fn render_query<R: Rng>(set: TemplateSet, cue: Option<&str>, attr: &str, rng: &mut R) -> RenderedQuery {
    match set {
        TemplateSet::Gift => {
            let t = GIFT_TEMPLATES.choose(rng).unwrap();
            let clause = match cue {
                Some(c) => GIFT_CUE.choose(rng).unwrap().replace("{c}", c),
                None => GIFT_NOCUE.choose(rng).unwrap().to_string(),
            };
            let rel = RELATIONS.choose(rng).unwrap();
            let occ = OCCASIONS.choose(rng).unwrap();
            let text = fill(t, &[("rel", rel), ("occ", occ), ("cue", &clause), ("attr", attr)]);
            let age = *AgeBand::ALL.choose(rng).unwrap();
            let gender = *Gender::ALL.choose(rng).unwrap();
            (text, Some(age), Some(gender))
        }
        TemplateSet::Copurchase | TemplateSet::Qa => {
            let (bank, nocue) = if set == TemplateSet::Copurchase {
                (COPURCHASE_TEMPLATES, COPURCHASE_NOCUE)
            } else {
                (QA_TEMPLATES, QA_NOCUE)
            };
            let t = bank.choose(rng).unwrap();
            let subject = match cue {
                Some(c) => c.to_string(),
                None => nocue.choose(rng).unwrap().to_string(),
            };
            (fill(t, &[("c", &subject), ("attr", attr)]), None, None)
        }
    }
}

fn build_corpus<R: Rng>(
    set: TemplateSet,
    categories: &[Category],
    cues: &[String],
    products: &[Product],
    rng: &mut R,
) -> Vec<String> {
    let mut lines = Vec::new();
    for (cat, cue) in categories.iter().zip(cues) {
        for t in KNOWLEDGE_TEMPLATES {
            lines.push(fill(t, &[("c", cue), ("n", &cat.name)]));
        }
        for _ in 0..LOG_LINES_PER_CATEGORY {
            let attr = if rng.gen_bool(0.5) {
                ATTR_CLAUSE.replace("{a}", ATTRIBUTES.choose(rng).unwrap())
            } else {
                String::new()
            };
            let (text, _, _) = render_query(set, Some(cue), &attr, rng);
            let lead = LOG_LEADS.choose(rng).unwrap();
            lines.push(format!("{lead} {text} {} .", cat.name));
        }
    }
    for p in products {
        let name = &categories
            .iter()
            .find(|c| c.id == p.category_id)
            .expect("product category exists")
            .name;
        lines.push(format!("the {} is one of our {} .", p.title, name));
    }
    // Query phrasing, without any answer, so template words are in vocabulary.
    let attr_filler = |i: usize| ATTR_CLAUSE.replace("{a}", ATTRIBUTES[i % ATTRIBUTES.len()]);
    match set {
        TemplateSet::Gift => {
            let rounds = RELATIONS.len().max(OCCASIONS.len()).max(GIFT_CUE.len()).max(GIFT_NOCUE.len());
            for (ti, t) in GIFT_TEMPLATES.iter().enumerate() {
                for i in 0..rounds {
                    let k = ti + i;
                    let clause = GIFT_NOCUE[k % GIFT_NOCUE.len()].to_string();
                    lines.push(fill(
                        t,
                        &[
                            ("rel", RELATIONS[k % RELATIONS.len()]),
                            ("occ", OCCASIONS[k % OCCASIONS.len()]),
                            ("cue", &clause),
                            ("attr", &attr_filler(k)),
                        ],
                    ));
                }
            }
            for (i, c) in GIFT_CUE.iter().enumerate() {
                lines.push(format!("my {}{} .", RELATIONS[i], c.replace("{c}", "music")));
            }
        }
        TemplateSet::Copurchase | TemplateSet::Qa => {
            let (bank, nocue) = if set == TemplateSet::Copurchase {
                (COPURCHASE_TEMPLATES, COPURCHASE_NOCUE)
            } else {
                (QA_TEMPLATES, QA_NOCUE)
            };
            for (ti, t) in bank.iter().enumerate() {
                for (i, s) in nocue.iter().enumerate() {
                    lines.push(fill(t, &[("c", s), ("attr", &attr_filler(ti + i))]));
                }
            }
        }
    }
    lines
}

pub fn write_world(world: &SyntheticWorld, dir: &Path) -> Result<()> {
    world.catalog.write(dir)?;
    let mut corpus = world.corpus.join("\n");
    corpus.push('\n');
    let cpath = dir.join(CORPUS_FILE);
    fs::write(&cpath, corpus).map_err(|e| Error::io(&cpath, e))?;
    let meta = WorldMeta {
        config: world.config.clone(),
        cues: world.cues.clone(),
    };
    let mpath = dir.join(WORLD_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn read_corpus(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(CORPUS_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Loads a world written by [`write_world`].
pub fn load_world(dir: &Path) -> Result<SyntheticWorld> {
    let catalog = crate::catalog::load_catalog(dir)?;
    let corpus = read_corpus(dir)?;
    let mpath = dir.join(WORLD_FILE);
    if !mpath.exists() {
        return Err(Error::MissingFile(mpath));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: WorldMeta = serde_json::from_str(&text)?;
    let ground_truth = catalog.triplets().to_vec();
    Ok(SyntheticWorld {
        config: meta.config,
        catalog,
        corpus,
        ground_truth,
        cues: meta.cues,
    })
}
