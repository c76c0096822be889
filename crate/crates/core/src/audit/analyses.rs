//! The full set of audit tables, one CSV each.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    aggregate_cities, association_difference, association_ratio, avg_price_by_location, intersectional_scatter,
    orientation_scatter, price_distribution, price_percentage_score, top_name_words, BiasAxisPair, RecommendationPool,
    ScatterOutcome,
};
use crate::corpus::PriceLevel;
use crate::error::{Error, Result};

/// City key for statistics computed on the union of every city's pool.
pub const ALL_CITIES: &str = "ALL";

const JOINT_AXIS: &str = "race+gender";
const JOINT_GROUPS: [&str; 4] = ["black+female", "black+male", "white+female", "white+male"];

/// Recommendation pools of one city, by bias type.
#[derive(Debug, Clone, Default)]
pub struct CityPools {
    pub city: String,
    pub names: Option<RecommendationPool>,
    pub sexual_orientation: Option<RecommendationPool>,
    pub location: Option<RecommendationPool>,
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    /// Categories for the orientation scatter (lowercased on use).
    pub nightlife: Vec<String>,
    pub top_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceRow {
    pub city: String,
    pub axis: String,
    pub polarity: String,
    pub price_level: String,
    pub score: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceAggregateRow {
    pub axis: String,
    pub polarity: String,
    pub price_level: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ci95: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplatePriceRow {
    pub city: String,
    pub template_id: String,
    pub axis: String,
    pub polarity: String,
    pub price_level: String,
    pub score: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationRow {
    pub city: String,
    pub axis: String,
    pub l: String,
    pub l_prime: String,
    pub category: String,
    pub difference: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub city: String,
    pub category: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationRow {
    pub city: String,
    pub rank: usize,
    pub location: String,
    pub kind: String,
    pub mean_price: f64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordRow {
    pub city: String,
    pub axis: String,
    pub polarity: String,
    pub rank: usize,
    pub word: String,
    pub count: usize,
}

/// Every audit table plus notes about skipped analyses.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditTables {
    pub price_scores: Vec<PriceRow>,
    pub price_aggregate: Vec<PriceAggregateRow>,
    pub template_price_scores: Vec<TemplatePriceRow>,
    pub associations: Vec<AssociationRow>,
    pub intersectional_scatter: Vec<ScatterRow>,
    pub orientation_scatter: Vec<ScatterRow>,
    pub location_prices: Vec<LocationRow>,
    pub name_words: Vec<WordRow>,
    pub notes: Vec<String>,
}

fn pairs_for_names() -> Vec<BiasAxisPair> {
    vec![BiasAxisPair::race(), BiasAxisPair::gender()]
}

fn pairs_for_orientation() -> Vec<BiasAxisPair> {
    vec![
        BiasAxisPair::rel1_gender(),
        BiasAxisPair::rel2_gender(),
        BiasAxisPair::new("orientation", "homosexual", "heterosexual").expect("distinct"),
    ]
}

fn price_rows(city: &str, pool: &RecommendationPool, pairs: &[BiasAxisPair], joint: bool) -> Vec<PriceRow> {
    let mut rows = Vec::new();
    for pair in pairs {
        for level in PriceLevel::ALL {
            let share = price_percentage_score(pool, pair, level);
            for (polarity, score) in [(&pair.l, share.map(|s| s.l)), (&pair.l_prime, share.map(|s| s.l_prime))] {
                rows.push(PriceRow {
                    city: city.into(),
                    axis: pair.axis.clone(),
                    polarity: polarity.clone(),
                    price_level: level.symbol().into(),
                    score,
                    support: share.map_or(0, |s| s.support),
                });
            }
        }
    }
    if joint {
        for level in PriceLevel::ALL {
            let dist = price_distribution(pool, JOINT_AXIS, &JOINT_GROUPS, level);
            let support = pool
                .items
                .iter()
                .filter(|i| {
                    i.price_level == Some(level)
                        && i.label(JOINT_AXIS).is_some_and(|v| JOINT_GROUPS.contains(&v.as_str()))
                })
                .count();
            for (g, group) in JOINT_GROUPS.iter().enumerate() {
                rows.push(PriceRow {
                    city: city.into(),
                    axis: JOINT_AXIS.into(),
                    polarity: (*group).into(),
                    price_level: level.symbol().into(),
                    score: dist.as_ref().map(|d| d[g]),
                    support,
                });
            }
        }
    }
    rows
}

fn association_rows(
    city: &str,
    pool: &RecommendationPool,
    pairs: &[BiasAxisPair],
    categories: &[String],
    notes: &mut Vec<String>,
) -> Vec<AssociationRow> {
    let mut rows = Vec::new();
    for pair in pairs {
        for category in categories {
            let diff = association_difference(pool, category, pair);
            let ratio = association_ratio(pool, category, pair);
            match (diff, ratio) {
                (Ok(difference), Ok(ratio)) => rows.push(AssociationRow {
                    city: city.into(),
                    axis: pair.axis.clone(),
                    l: pair.l.clone(),
                    l_prime: pair.l_prime.clone(),
                    category: category.clone(),
                    difference,
                    ratio,
                }),
                (Err(e), _) | (_, Err(e)) => {
                    notes.push(format!("{city}: associations on {} skipped: {e}", pair.axis));
                    break;
                }
            }
        }
    }
    rows
}

fn scatter_rows(city: &str, outcome: ScatterOutcome, what: &str, notes: &mut Vec<String>) -> Vec<ScatterRow> {
    for skip in outcome.skipped {
        notes.push(format!("{city}: {what} skipped category {skip}"));
    }
    outcome
        .points
        .into_iter()
        .map(|p| ScatterRow {
            city: city.into(),
            category: p.category,
            x: p.x,
            y: p.y,
        })
        .collect()
}

fn pooled<F>(cities: &[CityPools], pick: F) -> Option<RecommendationPool>
where
    F: Fn(&CityPools) -> Option<&RecommendationPool>,
{
    let pools: Vec<&RecommendationPool> = cities.iter().filter_map(&pick).collect();
    (!pools.is_empty()).then(|| RecommendationPool::merge(pools))
}

/// Runs every applicable analysis on each city and on the pooled union.
pub fn run_audit(cities: &[CityPools], options: &AuditOptions) -> AuditTables {
    let mut t = AuditTables::default();
    let nightlife: Vec<String> = options.nightlife.iter().map(|c| c.to_lowercase()).collect();

    let mut scopes: Vec<CityPools> = cities.to_vec();
    if cities.len() > 1 {
        scopes.push(CityPools {
            city: ALL_CITIES.into(),
            names: pooled(cities, |c| c.names.as_ref()),
            sexual_orientation: pooled(cities, |c| c.sexual_orientation.as_ref()),
            location: pooled(cities, |c| c.location.as_ref()),
        });
    }

    for scope in &scopes {
        let city = scope.city.as_str();
        if let Some(pool) = &scope.names {
            if pool.has_prices() {
                t.price_scores.extend(price_rows(city, pool, &pairs_for_names(), true));
                if city != ALL_CITIES {
                    for template in pool.template_ids() {
                        let sub = pool.filter(|i| i.template_id == template);
                        for row in price_rows(city, &sub, &pairs_for_names(), false) {
                            t.template_price_scores.push(TemplatePriceRow {
                                city: row.city,
                                template_id: template.clone(),
                                axis: row.axis,
                                polarity: row.polarity,
                                price_level: row.price_level,
                                score: row.score,
                                support: row.support,
                            });
                        }
                    }
                }
            } else {
                t.notes.push(format!(
                    "{city}: names price analyses skipped: no recommended item has a price level"
                ));
            }
            let categories: Vec<String> = pool.categories().into_iter().collect();
            t.associations.extend(association_rows(
                city,
                pool,
                &pairs_for_names(),
                &categories,
                &mut t.notes,
            ));
            match intersectional_scatter(
                pool,
                &BiasAxisPair::race(),
                &BiasAxisPair::gender(),
                categories.iter().map(String::as_str),
            ) {
                Ok(out) => {
                    let rows = scatter_rows(city, out, "intersectional scatter", &mut t.notes);
                    t.intersectional_scatter.extend(rows);
                }
                Err(e) => t.notes.push(format!("{city}: intersectional scatter skipped: {e}")),
            }
            if city == ALL_CITIES || cities.len() == 1 {
                for pair in pairs_for_names() {
                    for polarity in [&pair.l, &pair.l_prime] {
                        let words = top_name_words(pool, &pair.axis, polarity, options.top_words);
                        t.name_words.extend(words.into_iter().enumerate().map(|(r, w)| WordRow {
                            city: city.into(),
                            axis: pair.axis.clone(),
                            polarity: polarity.clone(),
                            rank: r + 1,
                            word: w.word,
                            count: w.count,
                        }));
                    }
                }
            }
        }
        if let Some(pool) = &scope.sexual_orientation {
            if pool.has_prices() {
                t.price_scores
                    .extend(price_rows(city, pool, &pairs_for_orientation(), false));
            } else {
                t.notes.push(format!(
                    "{city}: sexual_orientation price analyses skipped: no recommended item has a price level"
                ));
            }
            t.associations.extend(association_rows(
                city,
                pool,
                &pairs_for_orientation(),
                &nightlife,
                &mut t.notes,
            ));
            match orientation_scatter(pool, nightlife.iter().map(String::as_str)) {
                Ok(out) => {
                    let rows = scatter_rows(city, out, "orientation scatter", &mut t.notes);
                    t.orientation_scatter.extend(rows);
                }
                Err(e) => t.notes.push(format!("{city}: orientation scatter skipped: {e}")),
            }
        }
        if let Some(pool) = &scope.location {
            let ranks = avg_price_by_location(pool);
            if ranks.is_empty() {
                t.notes.push(format!(
                    "{city}: location price ranks skipped: no recommended item has a price level"
                ));
            }
            t.location_prices.extend(ranks.into_iter().enumerate().map(|(r, lp)| {
                let kind = pool
                    .items
                    .iter()
                    .find(|i| i.labels.get("location") == Some(&lp.location))
                    .and_then(|i| i.labels.get("kind").cloned())
                    .unwrap_or_default();
                LocationRow {
                    city: city.into(),
                    rank: r + 1,
                    location: lp.location,
                    kind,
                    mean_price: lp.mean_price,
                    items: lp.items,
                }
            }));
        }
    }

    t.price_aggregate = aggregate_price_rows(&t.price_scores);
    t
}

/// Cross-city mean, sd, and CI of each (axis, polarity, level) price score.
fn aggregate_price_rows(rows: &[PriceRow]) -> Vec<PriceAggregateRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows.iter().filter(|r| r.city != ALL_CITIES) {
        let key = (r.axis.clone(), r.polarity.clone(), r.price_level.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(axis, polarity, level)| {
            let values: Vec<(String, Option<f64>)> = rows
                .iter()
                .filter(|r| r.city != ALL_CITIES && r.axis == axis && r.polarity == polarity && r.price_level == level)
                .map(|r| (r.city.clone(), r.score))
                .collect();
            let agg = aggregate_cities(&values);
            PriceAggregateRow {
                axis,
                polarity,
                price_level: level,
                mean: agg.as_ref().map(|a| a.mean),
                sd: agg.as_ref().and_then(|a| a.sd),
                ci95: agg.as_ref().and_then(|a| a.ci95),
                n: agg.map_or(0, |a| a.n),
            }
        })
        .collect()
}

/// Serializes rows to CSV bytes with a fixed header. Undefined scores are empty cells.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Data(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

impl AuditTables {
    /// `(file name, csv bytes)` for every table, in a fixed order.
    pub fn csv_files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        Ok(vec![
            (
                "price_scores.csv",
                to_csv(
                    &self.price_scores,
                    &["city", "axis", "polarity", "price_level", "score", "support"],
                )?,
            ),
            (
                "price_aggregate.csv",
                to_csv(
                    &self.price_aggregate,
                    &["axis", "polarity", "price_level", "mean", "sd", "ci95", "n"],
                )?,
            ),
            (
                "template_price_scores.csv",
                to_csv(
                    &self.template_price_scores,
                    &[
                        "city",
                        "template_id",
                        "axis",
                        "polarity",
                        "price_level",
                        "score",
                        "support",
                    ],
                )?,
            ),
            (
                "associations.csv",
                to_csv(
                    &self.associations,
                    &["city", "axis", "l", "l_prime", "category", "difference", "ratio"],
                )?,
            ),
            (
                "intersectional_scatter.csv",
                to_csv(
                    &self.intersectional_scatter,
                    &["city", "category", "race_score", "gender_score"],
                )?,
            ),
            (
                "orientation_scatter.csv",
                to_csv(
                    &self.orientation_scatter,
                    &["city", "category", "rel1_gender_score", "rel2_gender_score"],
                )?,
            ),
            (
                "location_prices.csv",
                to_csv(
                    &self.location_prices,
                    &["city", "rank", "location", "kind", "mean_price", "items"],
                )?,
            ),
            (
                "name_words.csv",
                to_csv(&self.name_words, &["city", "axis", "polarity", "rank", "word", "count"])?,
            ),
        ])
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, bytes) in self.csv_files()? {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}
