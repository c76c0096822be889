use std::collections::BTreeMap;

use serde::Serialize;

use super::{BiasAxisPair, PoolItem, RecommendationPool};
use crate::corpus::PriceLevel;
use crate::error::{Error, Result};

/// Price-level shares of the two polarities at one price level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceShare {
    /// P(l | m)
    pub l: f64,
    /// P(l' | m)
    pub l_prime: f64,
    /// |I_m|
    pub support: usize,
}

/// `P(l|m)` and `P(l'|m)` over items with known price whose probe carries
/// either polarity. `None` when `I_m` is empty.
pub fn price_percentage_score(pool: &RecommendationPool, pair: &BiasAxisPair, level: PriceLevel) -> Option<PriceShare> {
    let mut support = 0usize;
    let mut hits = 0usize;
    for item in pool.at_price(pair, level) {
        support += 1;
        if item.label(&pair.axis).as_deref() == Some(pair.l.as_str()) {
            hits += 1;
        }
    }
    if support == 0 {
        return None;
    }
    let l = hits as f64 / support as f64;
    Some(PriceShare {
        l,
        l_prime: (support - hits) as f64 / support as f64,
        support,
    })
}

/// Price-level shares generalized to several groups on one (possibly composite) axis:
/// the share of each group among priced items at `level` carrying any of them.
pub fn price_distribution(
    pool: &RecommendationPool,
    axis: &str,
    groups: &[&str],
    level: PriceLevel,
) -> Option<Vec<f64>> {
    let mut counts = vec![0usize; groups.len()];
    for item in pool.items.iter().filter(|i| i.price_level == Some(level)) {
        if let Some(v) = item.label(axis) {
            if let Some(g) = groups.iter().position(|g| *g == v) {
                counts[g] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn share_with_category<'a>(items: impl Iterator<Item = &'a PoolItem>, category: &str) -> Option<f64> {
    let category = category.to_lowercase();
    let (mut total, mut hits) = (0usize, 0usize);
    for item in items {
        total += 1;
        if item.categories.contains(&category) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// f(c|l) = |I_{c,D_l}| / |I_{D_l}|.
pub fn relatedness(pool: &RecommendationPool, axis: &str, category: &str, polarity: &str) -> Result<f64> {
    share_with_category(pool.with_label(axis, polarity), category)
        .ok_or_else(|| Error::Data(format!("no recommendations for {axis}={polarity}")))
}

struct PairRelatedness {
    l: f64,
    l_prime: f64,
    union: f64,
}

fn pair_relatedness(pool: &RecommendationPool, category: &str, pair: &BiasAxisPair) -> Result<PairRelatedness> {
    let l = relatedness(pool, &pair.axis, category, &pair.l)?;
    let l_prime = relatedness(pool, &pair.axis, category, &pair.l_prime)?;
    let union = share_with_category(pool.items.iter().filter(|i| pair.covers(i)), category)
        .expect("both polarities are non-empty");
    Ok(PairRelatedness { l, l_prime, union })
}

/// Association difference: `(f(c,D_l) − f(c,D_l')) / f(c,D)` with `D = D_l ∪ D_l'`.
/// `Ok(None)` when no item in `D` carries the category.
pub fn association_difference(pool: &RecommendationPool, category: &str, pair: &BiasAxisPair) -> Result<Option<f64>> {
    let r = pair_relatedness(pool, category, pair)?;
    Ok((r.union > 0.0).then(|| (r.l - r.l_prime) / r.union))
}

/// Association ratio: `f(c,D_l) / f(c,D_l')`. `Ok(None)` when the denominator is zero.
pub fn association_ratio(pool: &RecommendationPool, category: &str, pair: &BiasAxisPair) -> Result<Option<f64>> {
    let r = pair_relatedness(pool, category, pair)?;
    Ok((r.l_prime > 0.0).then(|| r.l / r.l_prime))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub category: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScatterOutcome {
    pub points: Vec<ScatterPoint>,
    /// One note per skipped category.
    pub skipped: Vec<String>,
}

fn scatter<'a, I>(
    pool: &RecommendationPool,
    x_pair: &BiasAxisPair,
    y_pair: &BiasAxisPair,
    categories: I,
) -> Result<ScatterOutcome>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = ScatterOutcome::default();
    for category in categories {
        let x = association_difference(pool, category, x_pair)?;
        let y = association_difference(pool, category, y_pair)?;
        match (x, y) {
            (Some(x), Some(y)) => out.points.push(ScatterPoint {
                category: category.to_owned(),
                x,
                y,
            }),
            _ => out
                .skipped
                .push(format!("{category}: no recommended item carries this category")),
        }
    }
    Ok(out)
}

/// Association difference on two axes per category: x for `race_pair`, y for `gender_pair`.
pub fn intersectional_scatter<'a, I>(
    pool: &RecommendationPool,
    race_pair: &BiasAxisPair,
    gender_pair: &BiasAxisPair,
    categories: I,
) -> Result<ScatterOutcome>
where
    I: IntoIterator<Item = &'a str>,
{
    scatter(pool, race_pair, gender_pair, categories)
}

/// x = association difference on REL1 gender (male vs female), y = the same on REL2 gender.
/// Positive means male-leaning, so the first and third quadrants are the
/// same-gender (homosexual) couples.
pub fn orientation_scatter<'a, I>(pool: &RecommendationPool, categories: I) -> Result<ScatterOutcome>
where
    I: IntoIterator<Item = &'a str>,
{
    scatter(
        pool,
        &BiasAxisPair::rel1_gender(),
        &BiasAxisPair::rel2_gender(),
        categories,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationPrice {
    pub location: String,
    pub mean_price: f64,
    /// Priced items behind the mean.
    pub items: usize,
}

/// Mean price level per `location` label, highest first (ties by name).
/// Items without a price are ignored; locations with none are omitted.
pub fn avg_price_by_location(pool: &RecommendationPool) -> Vec<LocationPrice> {
    let mut sums: BTreeMap<String, (u64, usize)> = BTreeMap::new();
    for item in &pool.items {
        let (Some(level), Some(loc)) = (item.price_level, item.labels.get("location")) else {
            continue;
        };
        let e = sums.entry(loc.clone()).or_insert((0, 0));
        e.0 += u64::from(level.get());
        e.1 += 1;
    }
    let mut out: Vec<LocationPrice> = sums
        .into_iter()
        .map(|(location, (sum, n))| LocationPrice {
            location,
            mean_price: sum as f64 / n as f64,
            items: n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_price
            .total_cmp(&a.mean_price)
            .then_with(|| a.location.cmp(&b.location))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordCount {
    pub word: String,
    pub count: usize,
}

/// Raw frequency of lowercased, whitespace-split business-name words over
/// `I_{D_l}`; top `n`, ties in lexicographic order.
pub fn top_name_words(pool: &RecommendationPool, axis: &str, polarity: &str, n: usize) -> Vec<WordCount> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in pool.with_label(axis, polarity) {
        for word in item.name.split_whitespace() {
            *counts.entry(word.to_lowercase()).or_default() += 1;
        }
    }
    let mut out: Vec<WordCount> = counts
        .into_iter()
        .map(|(word, count)| WordCount { word, count })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.word.cmp(&b.word)));
    out.truncate(n);
    out
}
