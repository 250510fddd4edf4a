//! Queries, products, categories and their interaction log.
//!
//! On disk a catalog is three JSON-lines files in one directory:
//! `categories.jsonl`, `products.jsonl` and `triplets.jsonl`. Question/answer
//! corpora load through the same files by treating questions as queries,
//! answers as products and topic labels as categories.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATEGORIES_FILE: &str = "categories.jsonl";
pub const PRODUCTS_FILE: &str = "products.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub category_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "10s")]
    Teens,
    #[serde(rename = "20s")]
    Twenties,
    #[serde(rename = "30s")]
    Thirties,
    #[serde(rename = "40s")]
    Forties,
    #[serde(rename = "50s")]
    Fifties,
    #[serde(rename = "60s")]
    Sixties,
}

impl AgeBand {
    pub const ALL: [AgeBand; 6] = [
        AgeBand::Teens,
        AgeBand::Twenties,
        AgeBand::Thirties,
        AgeBand::Forties,
        AgeBand::Fifties,
        AgeBand::Sixties,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgeBand::Teens => "10s",
            AgeBand::Twenties => "20s",
            AgeBand::Thirties => "30s",
            AgeBand::Forties => "40s",
            AgeBand::Fifties => "50s",
            AgeBand::Sixties => "60s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub user_age_band: Option<AgeBand>,
    pub user_gender: Option<Gender>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InteractionTriplet {
    pub query_id: String,
    pub product_id: String,
    pub category_id: String,
}

/// One line of `triplets.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub query_id: String,
    pub query_text: String,
    pub product_id: String,
    pub category_id: String,
    pub age_band: Option<AgeBand>,
    pub gender: Option<Gender>,
}

/// Validated, immutable catalog. Iteration order is file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    categories: Vec<Category>,
    products: Vec<Product>,
    queries: Vec<Query>,
    triplets: Vec<InteractionTriplet>,
    category_pos: HashMap<String, usize>,
    product_pos: HashMap<String, usize>,
    query_pos: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(
        categories: Vec<Category>,
        products: Vec<Product>,
        queries: Vec<Query>,
        triplets: Vec<InteractionTriplet>,
    ) -> Result<Self> {
        let mut category_pos = HashMap::new();
        for (i, c) in categories.iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(Error::Precondition(format!("category {} has an empty name", c.id)));
            }
            if category_pos.insert(c.id.clone(), i).is_some() {
                return Err(Error::Duplicate(format!("category {}", c.id)));
            }
        }
        let mut product_pos = HashMap::new();
        for (i, p) in products.iter().enumerate() {
            if !category_pos.contains_key(&p.category_id) {
                return Err(Error::DanglingReference(format!(
                    "product {} -> category {}",
                    p.id, p.category_id
                )));
            }
            if product_pos.insert(p.id.clone(), i).is_some() {
                return Err(Error::Duplicate(format!("product {}", p.id)));
            }
        }
        let mut query_pos = HashMap::new();
        for (i, q) in queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(Error::Precondition(format!("query {} has empty text", q.id)));
            }
            if query_pos.insert(q.id.clone(), i).is_some() {
                return Err(Error::Duplicate(format!("query {}", q.id)));
            }
        }
        for t in &triplets {
            if !query_pos.contains_key(&t.query_id) {
                return Err(Error::DanglingReference(format!("triplet -> query {}", t.query_id)));
            }
            let p = product_pos
                .get(&t.product_id)
                .map(|&i| &products[i])
                .ok_or_else(|| Error::DanglingReference(format!("triplet -> product {}", t.product_id)))?;
            if !category_pos.contains_key(&t.category_id) {
                return Err(Error::DanglingReference(format!("triplet -> category {}", t.category_id)));
            }
            if p.category_id != t.category_id {
                return Err(Error::Inconsistent(format!(
                    "triplet ({}, {}) names category {} but the product belongs to {}",
                    t.query_id, t.product_id, t.category_id, p.category_id
                )));
            }
        }
        Ok(Self {
            categories,
            products,
            queries,
            triplets,
            category_pos,
            product_pos,
            query_pos,
        })
    }

    /// Builds a catalog from interaction-log records, collecting queries in
    /// first-appearance order.
    pub fn from_records(
        categories: Vec<Category>,
        products: Vec<Product>,
        records: &[TripletRecord],
    ) -> Result<Self> {
        let mut queries: Vec<Query> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut triplets = Vec::with_capacity(records.len());
        for r in records {
            let q = Query {
                id: r.query_id.clone(),
                text: r.query_text.clone(),
                user_age_band: r.age_band,
                user_gender: r.gender,
            };
            match seen.get(&r.query_id) {
                Some(&i) if queries[i] != q => {
                    return Err(Error::Inconsistent(format!(
                        "query {} appears with differing text or demographics",
                        r.query_id
                    )))
                }
                Some(_) => {}
                None => {
                    seen.insert(q.id.clone(), queries.len());
                    queries.push(q);
                }
            }
            triplets.push(InteractionTriplet {
                query_id: r.query_id.clone(),
                product_id: r.product_id.clone(),
                category_id: r.category_id.clone(),
            });
        }
        Self::new(categories, products, queries, triplets)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn triplets(&self) -> &[InteractionTriplet] {
        &self.triplets
    }

    pub fn category(&self, id: &str) -> Option<&Category> {
        self.category_pos.get(id).map(|&i| &self.categories[i])
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.product_pos.get(id).map(|&i| &self.products[i])
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_pos.get(id).map(|&i| &self.queries[i])
    }

    /// True when any query carries demographic fields.
    pub fn has_demographics(&self) -> bool {
        self.queries
            .iter()
            .any(|q| q.user_age_band.is_some() || q.user_gender.is_some())
    }

    pub fn records(&self) -> Vec<TripletRecord> {
        self.triplets
            .iter()
            .map(|t| {
                let q = self.query(&t.query_id).expect("validated");
                TripletRecord {
                    query_id: t.query_id.clone(),
                    query_text: q.text.clone(),
                    product_id: t.product_id.clone(),
                    category_id: t.category_id.clone(),
                    age_band: q.user_age_band,
                    gender: q.user_gender,
                }
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(CATEGORIES_FILE), &self.categories)?;
        write_jsonl(&dir.join(PRODUCTS_FILE), &self.products)?;
        write_jsonl(&dir.join(TRIPLETS_FILE), &self.records())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Malformed {
            file: name.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_catalog(dir: &Path) -> Result<Catalog> {
    let categories: Vec<Category> = read_jsonl(&dir.join(CATEGORIES_FILE))?;
    let products: Vec<Product> = read_jsonl(&dir.join(PRODUCTS_FILE))?;
    let records: Vec<TripletRecord> = read_jsonl(&dir.join(TRIPLETS_FILE))?;
    Catalog::from_records(categories, products, &records)
}

/// Category id → product ids of that category, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryProductIndex {
    map: BTreeMap<String, Vec<String>>,
}

impl CategoryProductIndex {
    pub fn get(&self, category_id: &str) -> &[String] {
        self.map.get(category_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_category_index(catalog: &Catalog) -> CategoryProductIndex {
    let mut map: BTreeMap<String, Vec<String>> = catalog
        .categories()
        .iter()
        .map(|c| (c.id.clone(), Vec::new()))
        .collect();
    for p in catalog.products() {
        map.get_mut(&p.category_id).expect("validated").push(p.id.clone());
    }
    for v in map.values_mut() {
        v.sort();
    }
    CategoryProductIndex { map }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<InteractionTriplet>,
    pub test: Vec<InteractionTriplet>,
    pub cold_start: bool,
}

impl DatasetSplit {
    /// Checks that no (query, product) pair is shared between train and test
    /// and, for cold-start splits, that no test product appears in train.
    pub fn verify(&self) -> Result<()> {
        let train_pairs: HashSet<(&str, &str)> = self
            .train
            .iter()
            .map(|t| (t.query_id.as_str(), t.product_id.as_str()))
            .collect();
        if let Some(t) = self
            .test
            .iter()
            .find(|t| train_pairs.contains(&(t.query_id.as_str(), t.product_id.as_str())))
        {
            return Err(Error::Precondition(format!(
                "pair ({}, {}) in both train and test",
                t.query_id, t.product_id
            )));
        }
        if self.cold_start {
            let train_products: HashSet<&str> = self.train.iter().map(|t| t.product_id.as_str()).collect();
            if let Some(t) = self.test.iter().find(|t| train_products.contains(t.product_id.as_str())) {
                return Err(Error::Precondition(format!(
                    "cold-start test product {} also appears in train",
                    t.product_id
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for DatasetSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} train / {} test{}",
            self.train.len(),
            self.test.len(),
            if self.cold_start { " (cold start)" } else { "" }
        )
    }
}

pub fn split_dataset(
    triplets: &[InteractionTriplet],
    test_fraction: f64,
    cold_start: bool,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    if triplets.len() < 2 {
        return Err(Error::InfeasibleSplit("need at least two triplets".into()));
    }
    let n = triplets.len();
    let target = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group by the unit that must not straddle the split.
    let key = |t: &InteractionTriplet| -> (String, String) {
        if cold_start {
            (t.product_id.clone(), String::new())
        } else {
            (t.query_id.clone(), t.product_id.clone())
        }
    };
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, t) in triplets.iter().enumerate() {
        groups.entry(key(t)).or_default().push(i);
    }
    let mut units: Vec<Vec<usize>> = groups.into_values().collect();
    units.shuffle(&mut rng);

    let mut in_test = vec![false; n];
    let mut taken = 0;
    for unit in &units {
        if taken >= target {
            break;
        }
        if taken + unit.len() > n - 1 {
            continue;
        }
        for &i in unit {
            in_test[i] = true;
        }
        taken += unit.len();
    }
    if taken == 0 {
        return Err(Error::InfeasibleSplit(if cold_start {
            "every product is needed in train; no product can be held out".into()
        } else {
            "no pair can be held out".into()
        }));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, t) in triplets.iter().enumerate() {
        if in_test[i] {
            test.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    let split = DatasetSplit {
        train,
        test,
        cold_start,
    };
    split.verify()?;
    Ok(split)
}
