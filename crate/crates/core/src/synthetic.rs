//! Synthetic multi-city corpora with an optionally planted name/price association.
//!
//! Each city has venues at three price levels. Low-priced venues carry
//! [`LOW_CATEGORY`], high-priced ones [`HIGH_CATEGORY`]. Reviews use
//! level-shared and venue-specific vocabulary, and most mention a person by
//! first name. Under [`Plant::Planted`], a group-A name goes with a level-1
//! venue at the given rate and a group-B name with a level-3 venue; under
//! [`Plant::Neutral`] the venue is drawn independently of the name.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use crate::corpus::{Business, PriceLevel, Review};
use crate::error::{Error, Result};
use crate::probes::default_lexicons;
use crate::rng;

pub const LOW_CATEGORY: &str = "Diners";
pub const MID_CATEGORY: &str = "Cafes";
pub const HIGH_CATEGORY: &str = "Steakhouses";

const FOODS: [&str; 40] = [
    "tacos",
    "ramen",
    "pho",
    "burgers",
    "dumplings",
    "curry",
    "brisket",
    "oysters",
    "gnocchi",
    "paella",
    "kimchi",
    "falafel",
    "pierogi",
    "risotto",
    "tamales",
    "bibimbap",
    "ceviche",
    "lasagna",
    "shawarma",
    "gumbo",
    "biscuits",
    "pancakes",
    "wings",
    "noodles",
    "sushi",
    "lobster",
    "scallops",
    "truffle",
    "souffle",
    "crepes",
    "bagels",
    "pretzels",
    "chowder",
    "empanadas",
    "samosas",
    "goulash",
    "tapas",
    "meatballs",
    "porridge",
    "brioche",
];

const LEVEL_WORDS: [[&str; 6]; 3] = [
    ["cheap", "greasy", "quick", "budget", "counter", "fries"],
    ["cozy", "brunch", "latte", "friendly", "patio", "salads"],
    ["elegant", "sommelier", "tasting", "candlelit", "vintage", "exquisite"],
];

const NAME_CLAUSES: [&str; 4] = [
    "I went with {NAME} and",
    "{NAME} picked this place and",
    "my friend {NAME} said",
    "{NAME} and I agreed",
];

/// How names relate to venue price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plant {
    /// Group A with level 1 and group B with level 3, each at `rate`.
    Planted {
        rate: f64,
    },
    Neutral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub cities: Vec<String>,
    pub venues_per_city: usize,
    pub reviews_per_city: usize,
    /// Share of reviews mentioning a name.
    pub name_rate: f64,
    pub plant: Plant,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            cities: vec!["Springfield".into(), "Riverton".into()],
            venues_per_city: 20,
            reviews_per_city: 1000,
            name_rate: 0.7,
            plant: Plant::Planted { rate: 0.9 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub businesses: Vec<Business>,
    pub reviews: Vec<Review>,
}

/// Group A (black-labelled) and group B (white-labelled) names from the shipped lexicon.
pub fn default_groups() -> (Vec<String>, Vec<String>) {
    let lex = default_lexicons();
    let pick = |race: &str| {
        lex.get("names")
            .iter()
            .filter(|e| e.axes.get("race").map(String::as_str) == Some(race))
            .map(|e| e.surface.clone())
            .collect()
    };
    (pick("black"), pick("white"))
}

/// Price level (1..=3) of venue `i` out of `n`: about 35% low, 30% mid, 35% high.
pub fn level_of(i: usize, n: usize) -> u8 {
    if i * 20 < n * 7 {
        1
    } else if i * 20 < n * 13 {
        2
    } else {
        3
    }
}

fn venue_name(level: u8, food: &str) -> String {
    let mut chars = food.chars();
    let cap: String = chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default();
    let suffix = match level {
        1 => "Diner",
        2 => "Cafe",
        _ => "Steakhouse",
    };
    format!("{cap} {suffix}")
}

pub fn generate(config: &SyntheticConfig, group_a: &[String], group_b: &[String]) -> Result<SyntheticCorpus> {
    let n = config.venues_per_city;
    if n < 3 || group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Config(
            "synthetic corpus needs at least 3 venues and two non-empty name groups".into(),
        ));
    }
    if let Plant::Planted { rate } = config.plant {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("plant rate {rate} outside [0,1]")));
        }
    }
    let mut rng = rng::substream(config.seed, "synthetic");
    let mut businesses = Vec::new();
    let mut reviews = Vec::new();
    for (ci, city) in config.cities.iter().enumerate() {
        let levels: Vec<u8> = (0..n).map(|i| level_of(i, n)).collect();
        let foods: Vec<[&str; 2]> = (0..n)
            .map(|i| {
                [
                    FOODS[(2 * i + ci) % FOODS.len()],
                    FOODS[(2 * i + 1 + 3 * ci) % FOODS.len()],
                ]
            })
            .collect();
        let names: Vec<String> = (0..n).map(|i| venue_name(levels[i], foods[i][0])).collect();
        let at_level = |l: u8| -> Vec<usize> { (0..n).filter(|&i| levels[i] == l).collect() };
        let (low, high) = (at_level(1), at_level(3));
        let not_low: Vec<usize> = (0..n).filter(|&i| levels[i] != 1).collect();
        let not_high: Vec<usize> = (0..n).filter(|&i| levels[i] != 3).collect();

        let mut counts = vec![0u64; n];
        let mut city_reviews = Vec::with_capacity(config.reviews_per_city);
        for r in 0..config.reviews_per_city {
            // nameless warm-up reviews, round-robin over venues
            let mention = if r < n * 3 {
                None
            } else if rng.gen_bool(config.name_rate) {
                let group_a_pick = rng.gen_bool(0.5);
                let pool = if group_a_pick { group_a } else { group_b };
                Some((group_a_pick, pool.choose(&mut rng).expect("non-empty").clone()))
            } else {
                None
            };
            let venue = match (&mention, config.plant) {
                (None, _) if r < n * 3 => r % n,
                (Some((is_a, _)), Plant::Planted { rate }) => {
                    let (hit, miss) = if *is_a { (&low, &not_low) } else { (&high, &not_high) };
                    if rng.gen_bool(rate) {
                        *hit.choose(&mut rng).expect("non-empty level")
                    } else {
                        *miss.choose(&mut rng).expect("non-empty level")
                    }
                }
                _ => rng.gen_range(0..n),
            };
            counts[venue] += 1;
            let lw = &LEVEL_WORDS[usize::from(levels[venue]) - 1];
            let mut words: Vec<String> = Vec::new();
            if let Some((_, name)) = &mention {
                words.push(
                    NAME_CLAUSES
                        .choose(&mut rng)
                        .expect("non-empty")
                        .replace("{NAME}", name),
                );
            }
            if rng.gen_bool(0.2) {
                words.push(format!("{} was", names[venue]));
            }
            for _ in 0..3 {
                words.push(lw.choose(&mut rng).expect("non-empty").to_string());
            }
            words.push(format!("{} and {}", foods[venue][0], foods[venue][1]));
            city_reviews.push(Review {
                review_id: format!("{city}-r{r:05}"),
                business_id: format!("{city}-b{venue:02}"),
                city: city.clone(),
                text: words.join(" "),
            });
        }
        for i in 0..n {
            let category = match levels[i] {
                1 => LOW_CATEGORY,
                2 => MID_CATEGORY,
                _ => HIGH_CATEGORY,
            };
            businesses.push(Business {
                id: format!("{city}-b{i:02}"),
                name: names[i].clone(),
                city: city.clone(),
                price_level: Some(PriceLevel::new(levels[i])?),
                categories: [category.to_string(), "Restaurants".to_string()].into_iter().collect(),
                review_count: counts[i],
            });
        }
        reviews.extend(city_reviews);
    }
    Ok(SyntheticCorpus { businesses, reviews })
}

impl SyntheticCorpus {
    /// Businesses in the on-disk line format.
    pub fn businesses_jsonl(&self) -> String {
        self.businesses
            .iter()
            .map(|b| {
                json!({
                    "id": b.id,
                    "name": b.name,
                    "city": b.city,
                    "price": b.price_level.map(|p| p.symbol()),
                    "categories": b.categories,
                    "review_count": b.review_count,
                })
                .to_string()
                    + "\n"
            })
            .collect()
    }

    pub fn reviews_jsonl(&self) -> String {
        self.reviews
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain strings") + "\n")
            .collect()
    }

    /// Writes `businesses.jsonl` and `reviews.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let b = dir.join("businesses.jsonl");
        let r = dir.join("reviews.jsonl");
        std::fs::write(&b, self.businesses_jsonl()).map_err(|e| Error::io(&b, e))?;
        std::fs::write(&r, self.reviews_jsonl()).map_err(|e| Error::io(&r, e))?;
        Ok((b, r))
    }
}
