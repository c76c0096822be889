//! Bias statistics over pooled recommendation lists.
//!
//! Every probe's top-k list is expanded into one [`PoolItem`] per recommended
//! venue, tagged with the probe's labels. All scores are counts over that
//! multiset, so pooling across templates (or cities) is just concatenation.

mod aggregate;
pub mod analyses;
mod scores;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::corpus::{Catalog, PriceLevel};
use crate::error::{Error, Result};
use crate::probes::{Labels, Probe};
use crate::recommender::RecommendationList;

pub use aggregate::{aggregate_cities, t_quantile_975, AggregateScore};
pub use scores::{
    association_difference, association_ratio, avg_price_by_location, intersectional_scatter, orientation_scatter,
    price_distribution, price_percentage_score, relatedness, top_name_words, LocationPrice, PriceShare, ScatterOutcome,
    ScatterPoint, WordCount,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub business_id: String,
    pub name: String,
    pub price_level: Option<PriceLevel>,
    /// Lowercased category labels.
    pub categories: BTreeSet<String>,
    pub labels: Arc<Labels>,
    pub city: String,
    pub probe_id: String,
    pub template_id: String,
}

impl PoolItem {
    /// Value of `axis` for this item's probe. A composite axis such as
    /// `race+gender` yields the `+`-joined component values (`black+female`).
    pub fn label(&self, axis: &str) -> Option<String> {
        label_value(&self.labels, axis)
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains(&category.to_lowercase())
    }
}

pub fn label_value(labels: &Labels, axis: &str) -> Option<String> {
    if axis.contains('+') {
        let parts: Option<Vec<&str>> = axis.split('+').map(|a| labels.get(a).map(String::as_str)).collect();
        parts.map(|p| p.join("+"))
    } else {
        labels.get(axis).cloned()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecommendationPool {
    pub items: Vec<PoolItem>,
}

impl RecommendationPool {
    pub fn new(items: Vec<PoolItem>) -> Self {
        RecommendationPool { items }
    }

    /// Expands each probe's list into pool items. Probes without a list are
    /// returned separately; a recommended id missing from `catalog` is an error.
    pub fn build(
        city: &str,
        probes: &[Probe],
        lists: &BTreeMap<String, RecommendationList>,
        catalog: &Catalog,
    ) -> Result<(Self, Vec<String>)> {
        let mut items = Vec::new();
        let mut missing = Vec::new();
        for probe in probes {
            let Some(list) = lists.get(&probe.probe_id) else {
                missing.push(probe.probe_id.clone());
                continue;
            };
            let labels = Arc::new(probe.labels.clone());
            for id in list.ids() {
                let b = catalog
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("recommended business {id:?} not in the {city} catalog")))?;
                items.push(PoolItem {
                    business_id: b.id.clone(),
                    name: b.name.clone(),
                    price_level: b.price_level,
                    categories: b.categories.iter().map(|c| c.to_lowercase()).collect(),
                    labels: Arc::clone(&labels),
                    city: city.to_owned(),
                    probe_id: probe.probe_id.clone(),
                    template_id: probe.template_id.clone(),
                });
            }
        }
        Ok((RecommendationPool { items }, missing))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn merge<'a, I: IntoIterator<Item = &'a RecommendationPool>>(pools: I) -> Self {
        RecommendationPool {
            items: pools.into_iter().flat_map(|p| p.items.iter().cloned()).collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(&PoolItem) -> bool) -> Self {
        RecommendationPool {
            items: self.items.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    pub fn template_ids(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.template_id.clone()).collect()
    }

    /// Every category carried by some item, ascending.
    pub fn categories(&self) -> BTreeSet<String> {
        self.items.iter().flat_map(|i| i.categories.iter().cloned()).collect()
    }

    pub fn has_prices(&self) -> bool {
        self.items.iter().any(|i| i.price_level.is_some())
    }

    /// I_{D_l}: items recommended to probes labelled `polarity` on `axis`.
    pub fn with_label<'a>(&'a self, axis: &'a str, polarity: &'a str) -> impl Iterator<Item = &'a PoolItem> + 'a {
        self.items
            .iter()
            .filter(move |i| i.label(axis).as_deref() == Some(polarity))
    }

    /// I_m restricted to the two polarities of `pair`.
    pub fn at_price<'a>(
        &'a self,
        pair: &'a BiasAxisPair,
        level: PriceLevel,
    ) -> impl Iterator<Item = &'a PoolItem> + 'a {
        self.items
            .iter()
            .filter(move |i| i.price_level == Some(level) && pair.covers(i))
    }
}

/// Two opposing values `(l, l')` on one label axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasAxisPair {
    pub axis: String,
    pub l: String,
    pub l_prime: String,
}

impl BiasAxisPair {
    pub fn new(axis: &str, l: &str, l_prime: &str) -> Result<Self> {
        if l == l_prime {
            return Err(Error::Contract(format!(
                "polarities of {axis} must differ, got {l} twice"
            )));
        }
        Ok(BiasAxisPair {
            axis: axis.into(),
            l: l.into(),
            l_prime: l_prime.into(),
        })
    }

    pub fn swapped(&self) -> Self {
        BiasAxisPair {
            axis: self.axis.clone(),
            l: self.l_prime.clone(),
            l_prime: self.l.clone(),
        }
    }

    /// True when the item's probe carries either polarity.
    pub fn covers(&self, item: &PoolItem) -> bool {
        matches!(item.label(&self.axis), Some(v) if v == self.l || v == self.l_prime)
    }

    pub fn race() -> Self {
        BiasAxisPair::new("race", "black", "white").expect("distinct")
    }

    pub fn gender() -> Self {
        BiasAxisPair::new("gender", "male", "female").expect("distinct")
    }

    pub fn rel1_gender() -> Self {
        BiasAxisPair::new("rel1_gender", "male", "female").expect("distinct")
    }

    pub fn rel2_gender() -> Self {
        BiasAxisPair::new("rel2_gender", "male", "female").expect("distinct")
    }
}
