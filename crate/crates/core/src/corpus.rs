//! Business/review ingestion, review-count filtering, venue-name masking and
//! deterministic stratified splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, LineError};
use crate::rng;

/// Literal token substituted for venue names.
pub const MASK_TOKEN: &str = "[MASK]";

/// Yelp-style price level, `$` (1) through `$$$$` (4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PriceLevel(u8);

impl PriceLevel {
    pub const ALL: [PriceLevel; 4] = [PriceLevel(1), PriceLevel(2), PriceLevel(3), PriceLevel(4)];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=4).contains(&level) {
            Ok(PriceLevel(level))
        } else {
            Err(Error::Data(format!("price level {level} outside 1..=4")))
        }
    }

    pub fn from_symbol(symbol: &str) -> Result<Self> {
        if !symbol.is_empty() && symbol.len() <= 4 && symbol.bytes().all(|b| b == b'$') {
            Ok(PriceLevel(symbol.len() as u8))
        } else {
            Err(Error::Data(format!("unrecognised price symbol {symbol:?}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        &"$$$$"[..self.0 as usize]
    }
}

impl TryFrom<u8> for PriceLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        PriceLevel::new(v)
    }
}

impl From<PriceLevel> for u8 {
    fn from(p: PriceLevel) -> u8 {
        p.0
    }
}

impl fmt::Display for PriceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Business {
    pub id: String,
    pub name: String,
    pub city: String,
    pub price_level: Option<PriceLevel>,
    pub categories: BTreeSet<String>,
    pub review_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub business_id: String,
    pub city: String,
    pub text: String,
}

/// Businesses in file order with an id index.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    businesses: Vec<Business>,
    index: HashMap<String, usize>,
}

impl Catalog {
    /// Builds a catalog, rejecting duplicate ids.
    pub fn new(businesses: Vec<Business>) -> Result<Self> {
        let mut index = HashMap::with_capacity(businesses.len());
        for (i, b) in businesses.iter().enumerate() {
            if index.insert(b.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate business id {:?}", b.id)));
            }
        }
        Ok(Catalog { businesses, index })
    }

    pub fn get(&self, id: &str) -> Option<&Business> {
        self.index.get(id).map(|&i| &self.businesses[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn businesses(&self) -> &[Business] {
        &self.businesses
    }

    pub fn len(&self) -> usize {
        self.businesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.businesses.is_empty()
    }

    /// Distinct cities in ascending order.
    pub fn cities(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.businesses.iter().map(|b| b.city.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn for_city(&self, city: &str) -> Catalog {
        let subset = self.businesses.iter().filter(|b| b.city == city).cloned().collect();
        Catalog::new(subset).expect("subset of a valid catalog has unique ids")
    }

    /// Business ids in ascending order: the stable class ordering of a model head.
    pub fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.businesses.iter().map(|b| b.id.clone()).collect();
        ids.sort();
        ids
    }
}

#[derive(Deserialize)]
struct RawBusiness {
    id: Option<String>,
    name: Option<String>,
    #[serde(default)]
    city: String,
    #[serde(default)]
    price: Option<String>,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default)]
    review_count: u64,
}

impl RawBusiness {
    fn validate(self) -> std::result::Result<Business, String> {
        let id = self.id.filter(|s| !s.is_empty()).ok_or("missing field `id`")?;
        let name = self.name.filter(|s| !s.is_empty()).ok_or("missing field `name`")?;
        let price_level = match self.price.as_deref() {
            None => None,
            Some(sym) => Some(PriceLevel::from_symbol(sym).map_err(|e| e.to_string())?),
        };
        Ok(Business {
            id,
            name,
            city: self.city,
            price_level,
            categories: self
                .categories
                .into_iter()
                .map(|c| c.trim().to_owned())
                .filter(|c| !c.is_empty())
                .collect(),
            review_count: self.review_count,
        })
    }
}

/// Parses a businesses file. I/O failure is fatal; bad lines are reported and skipped.
pub fn load_catalog(path: &Path) -> Result<(Catalog, Vec<LineError>)> {
    let text = jsonl::read_to_string(path)?;
    Ok(parse_catalog(&text))
}

pub fn parse_catalog(text: &str) -> (Catalog, Vec<LineError>) {
    let (raw, mut errors) = jsonl::parse_lines::<RawBusiness>(text);
    let mut seen = BTreeSet::new();
    let mut businesses = Vec::new();
    for (line, rec) in raw {
        match rec.validate() {
            Ok(b) if !seen.insert(b.id.clone()) => errors.push(LineError {
                line,
                message: format!("duplicate business id {:?}", b.id),
            }),
            Ok(b) => businesses.push(b),
            Err(message) => errors.push(LineError { line, message }),
        }
    }
    errors.sort_by_key(|e| e.line);
    let catalog = Catalog::new(businesses).expect("duplicates filtered above");
    (catalog, errors)
}

#[derive(Deserialize)]
struct RawReview {
    review_id: Option<String>,
    business_id: Option<String>,
    #[serde(default)]
    city: String,
    text: Option<String>,
}

pub fn load_reviews(path: &Path) -> Result<(Vec<Review>, Vec<LineError>)> {
    let text = jsonl::read_to_string(path)?;
    Ok(parse_reviews(&text))
}

pub fn parse_reviews(text: &str) -> (Vec<Review>, Vec<LineError>) {
    let (raw, mut errors) = jsonl::parse_lines::<RawReview>(text);
    let mut reviews = Vec::new();
    for (line, rec) in raw {
        match (rec.review_id, rec.business_id, rec.text) {
            (Some(review_id), Some(business_id), Some(text)) => reviews.push(Review {
                review_id,
                business_id,
                city: rec.city,
                text,
            }),
            _ => errors.push(LineError {
                line,
                message: "review requires review_id, business_id and text".into(),
            }),
        }
    }
    errors.sort_by_key(|e| e.line);
    (reviews, errors)
}

/// Keeps businesses with `review_count >= threshold` and the reviews that
/// resolve to a kept business.
pub fn filter_min_reviews(catalog: &Catalog, reviews: &[Review], threshold: u64) -> (Catalog, Vec<Review>) {
    let kept: Vec<Business> = catalog
        .businesses()
        .iter()
        .filter(|b| b.review_count >= threshold)
        .cloned()
        .collect();
    let kept = Catalog::new(kept).expect("subset of a valid catalog has unique ids");
    let reviews = reviews
        .iter()
        .filter(|r| kept.contains(&r.business_id))
        .cloned()
        .collect();
    (kept, reviews)
}

const MASK_CHARS: [char; 6] = ['[', 'M', 'A', 'S', 'K', ']'];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

/// Case-insensitive whole-token replacement of venue names by [`MASK_TOKEN`].
///
/// A token boundary is any position not adjacent to a letter, digit, `-` or
/// `_`, so `Finale's` is masked but `finale-worthy` is not. Longer names win
/// over shorter ones starting at the same position, and existing mask tokens
/// are never rewritten.
#[derive(Debug, Clone)]
pub struct EntityMasker {
    // keyed by the first lowercased char; each bucket sorted longest first
    by_first: HashMap<char, Vec<Vec<char>>>,
}

fn fold(s: &str) -> Vec<char> {
    s.chars().flat_map(char::to_lowercase).collect()
}

impl EntityMasker {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<char, Vec<Vec<char>>> = HashMap::new();
        for name in names {
            let folded = fold(name.as_ref().trim());
            if let Some(&first) = folded.first() {
                let bucket = by_first.entry(first).or_default();
                if !bucket.contains(&folded) {
                    bucket.push(folded);
                }
            }
        }
        for bucket in by_first.values_mut() {
            bucket.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        EntityMasker { by_first }
    }

    pub fn for_catalog(catalog: &Catalog) -> Self {
        Self::new(catalog.businesses().iter().map(|b| b.name.as_str()))
    }

    pub fn mask(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<Vec<char>> = chars.iter().map(|c| c.to_lowercase().collect()).collect();
        let mask = MASK_CHARS;
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            if chars[i..].starts_with(&mask) {
                out.push_str(MASK_TOKEN);
                i += mask.len();
                continue;
            }
            let at_boundary = i == 0 || !is_word_char(chars[i - 1]);
            if at_boundary {
                if let Some(len) = self.match_at(&chars, &folded, i) {
                    out.push_str(MASK_TOKEN);
                    i += len;
                    continue;
                }
            }
            out.push(chars[i]);
            i += 1;
        }
        out
    }

    /// Length in original chars of the longest name matching at `start`.
    fn match_at(&self, chars: &[char], folded: &[Vec<char>], start: usize) -> Option<usize> {
        let first = *folded[start].first()?;
        let candidates = self.by_first.get(&first)?;
        'names: for name in candidates {
            // walk original chars, consuming their lowercase expansions
            let mut pos = start;
            let mut k = 0;
            while k < name.len() {
                let exp = folded.get(pos)?;
                if (pos > start && chars[pos..].starts_with(&MASK_CHARS))
                    || exp.is_empty()
                    || name.len() - k < exp.len()
                    || name[k..k + exp.len()] != exp[..]
                {
                    continue 'names;
                }
                k += exp.len();
                pos += 1;
            }
            if pos < chars.len() && is_word_char(chars[pos]) {
                continue;
            }
            return Some(pos - start);
        }
        None
    }
}

/// One-shot convenience over [`EntityMasker`].
pub fn mask_entities<S: AsRef<str>>(text: &str, entity_names: &[S]) -> String {
    EntityMasker::new(entity_names.iter().map(|s| s.as_ref())).mask(text)
}

/// True when nothing but mask tokens, whitespace and punctuation remains.
pub fn is_mask_only(text: &str) -> bool {
    !text.replace(MASK_TOKEN, " ").chars().any(char::is_alphanumeric)
}

/// Masks every review against the catalog's venue names and drops reviews
/// left without content. Returns the kept reviews and the number dropped.
pub fn mask_reviews(catalog: &Catalog, reviews: &[Review]) -> (Vec<Review>, usize) {
    let masker = EntityMasker::for_catalog(catalog);
    let mut kept = Vec::with_capacity(reviews.len());
    let mut dropped = 0;
    for r in reviews {
        let text = masker.mask(&r.text);
        if is_mask_only(&text) {
            dropped += 1;
        } else {
            kept.push(Review { text, ..r.clone() });
        }
    }
    (kept, dropped)
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&p| p.is_nan() || p <= 0.0 || !p.is_finite()) {
            return Err(Error::Config(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Businesses with fewer reviews than this keep every review in train.
pub const MIN_REVIEWS_TO_SPLIT: usize = 3;

/// Stratified per-business split. Each business's reviews are sorted by id,
/// shuffled with the `split` substream and cut by `ratios` (rounded, with at
/// least one review kept in train). Returns the split plus warnings.
pub fn split_corpus(reviews: &[Review], ratios: SplitRatios, seed: u64) -> Result<(CorpusSplit, Vec<String>)> {
    ratios.validate()?;
    let mut by_business: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in reviews {
        by_business
            .entry(r.business_id.as_str())
            .or_default()
            .push(r.review_id.as_str());
    }
    let mut rng = rng::substream(seed, rng::SPLIT);
    let mut split = CorpusSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    let mut warnings = Vec::new();
    for (business, mut ids) in by_business {
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < MIN_REVIEWS_TO_SPLIT {
            warnings.push(format!(
                "business {business} has {} review(s); all assigned to train",
                ids.len()
            ));
            split.train.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_val = (n as f64 * ratios.validation).round() as usize;
        let n_test = (n as f64 * ratios.test).round() as usize;
        let n_val = n_val.min(n - 1);
        let n_test = n_test.min(n - 1 - n_val);
        let n_train = n - n_val - n_test;
        split.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split
            .validation
            .extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        split.test.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok((split, warnings))
}

/// Per-city dataset description in the shape of a dataset summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityStats {
    pub city: String,
    pub reviews: usize,
    pub businesses: usize,
    pub most_rated: u64,
    pub categories: usize,
    /// Most frequent categories by number of businesses, ties alphabetical.
    pub top_categories: Vec<String>,
    pub max_categories: usize,
    /// Percentage of priced businesses at `$`..`$$$$`; zero when none are priced.
    pub price_percentages: [f64; 4],
}

pub fn city_stats(city: &str, catalog: &Catalog, reviews: &[Review]) -> CityStats {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut price_counts = [0usize; 4];
    for b in catalog.businesses() {
        for c in &b.categories {
            *counts.entry(c.as_str()).or_default() += 1;
        }
        if let Some(p) = b.price_level {
            price_counts[p.get() as usize - 1] += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.iter().map(|(c, n)| (*c, *n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let priced: usize = price_counts.iter().sum();
    let price_percentages = price_counts.map(|n| {
        if priced == 0 {
            0.0
        } else {
            100.0 * n as f64 / priced as f64
        }
    });
    CityStats {
        city: city.to_owned(),
        reviews: reviews.len(),
        businesses: catalog.len(),
        most_rated: catalog.businesses().iter().map(|b| b.review_count).max().unwrap_or(0),
        categories: counts.len(),
        top_categories: ranked.iter().take(5).map(|(c, _)| c.to_string()).collect(),
        max_categories: catalog
            .businesses()
            .iter()
            .map(|b| b.categories.len())
            .max()
            .unwrap_or(0),
        price_percentages,
    }
}

/// Filtered, masked and split data for one city.
#[derive(Debug, Clone)]
pub struct CityCorpus {
    pub city: String,
    pub catalog: Catalog,
    pub reviews: Vec<Review>,
    pub split: CorpusSplit,
    pub dropped_empty: usize,
    pub warnings: Vec<String>,
}

impl CityCorpus {
    /// Runs filter → mask → split for one city of a (possibly multi-city) input.
    pub fn build(
        city: &str,
        catalog: &Catalog,
        reviews: &[Review],
        threshold: u64,
        ratios: SplitRatios,
        seed: u64,
    ) -> Result<Self> {
        let city_catalog = catalog.for_city(city);
        let city_reviews: Vec<Review> = reviews
            .iter()
            .filter(|r| r.city == city || (r.city.is_empty() && city_catalog.contains(&r.business_id)))
            .cloned()
            .collect();
        let (filtered, filtered_reviews) = filter_min_reviews(&city_catalog, &city_reviews, threshold);
        let (masked, dropped_empty) = mask_reviews(&filtered, &filtered_reviews);
        let (split, warnings) = split_corpus(&masked, ratios, seed)?;
        Ok(CityCorpus {
            city: city.to_owned(),
            catalog: filtered,
            reviews: masked,
            split,
            dropped_empty,
            warnings,
        })
    }

    pub fn stats(&self) -> CityStats {
        city_stats(&self.city, &self.catalog, &self.reviews)
    }

    pub fn review_index(&self) -> HashMap<&str, &Review> {
        self.reviews.iter().map(|r| (r.review_id.as_str(), r)).collect()
    }
}
