//! Adapter for recommendation lists produced outside this toolkit.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use super::model::{RankedItem, RecommendationList};
use crate::corpus::Catalog;
use crate::error::Result;
use crate::jsonl::{self, LineError};

#[derive(Deserialize)]
struct RawList {
    probe_id: String,
    items: Vec<RawItem>,
}

#[derive(Deserialize)]
struct RawItem {
    business_id: String,
    score: f64,
}

/// Reads `{probe_id, items: [{business_id, score}]}` lines, keeping lists whose
/// ids resolve in `catalog`, are distinct and carry non-increasing scores.
pub fn load_external_recommendations(
    path: &Path,
    catalog: &Catalog,
) -> Result<(BTreeMap<String, RecommendationList>, Vec<LineError>)> {
    let text = jsonl::read_to_string(path)?;
    Ok(parse_external_recommendations(&text, catalog))
}

pub fn parse_external_recommendations(
    text: &str,
    catalog: &Catalog,
) -> (BTreeMap<String, RecommendationList>, Vec<LineError>) {
    let (raw, mut errors) = jsonl::parse_lines::<RawList>(text);
    let mut lists = BTreeMap::new();
    for (line, rec) in raw {
        match validate(&rec, catalog) {
            Err(message) => errors.push(LineError { line, message }),
            Ok(()) if lists.contains_key(&rec.probe_id) => errors.push(LineError {
                line,
                message: format!("duplicate probe_id {:?}", rec.probe_id),
            }),
            Ok(()) => {
                let entries = rec
                    .items
                    .into_iter()
                    .map(|i| RankedItem {
                        business_id: i.business_id,
                        score: i.score,
                    })
                    .collect();
                lists.insert(
                    rec.probe_id.clone(),
                    RecommendationList {
                        probe_id: Some(rec.probe_id),
                        entries,
                    },
                );
            }
        }
    }
    errors.sort_by_key(|e| e.line);
    (lists, errors)
}

fn validate(rec: &RawList, catalog: &Catalog) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    for (i, item) in rec.items.iter().enumerate() {
        if !catalog.contains(&item.business_id) {
            return Err(format!("unknown business id {:?}", item.business_id));
        }
        if !seen.insert(item.business_id.as_str()) {
            return Err(format!("business id {:?} listed twice", item.business_id));
        }
        if !item.score.is_finite() {
            return Err(format!("non-finite score for {:?}", item.business_id));
        }
        if i > 0 && item.score > rec.items[i - 1].score {
            return Err(format!("scores increase at position {}", i + 1));
        }
    }
    Ok(())
}
