//! Probe inference and pooling for one city.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::audit::analyses::CityPools;
use crate::audit::RecommendationPool;
use crate::corpus::Catalog;
use crate::error::Result;
use crate::probes::{BiasType, Probe};
use crate::recommender::{LmRec, RecommendationList};

/// Top-`k` list for every probe, keyed by probe id. Inference runs in
/// parallel over the immutable model.
pub fn recommend_probes(model: &LmRec, probes: &[Probe], k: usize) -> Result<BTreeMap<String, RecommendationList>> {
    let lists: Vec<RecommendationList> = probes
        .par_iter()
        .map(|p| {
            model.recommend(&p.text, k).map(|mut l| {
                l.probe_id = Some(p.probe_id.clone());
                l
            })
        })
        .collect::<Result<_>>()?;
    Ok(probes.iter().map(|p| p.probe_id.clone()).zip(lists).collect())
}

/// Pools for each bias type from precomputed lists. Probes without a list
/// are returned as `(bias type, probe id)`.
pub fn pools_from_lists(
    city: &str,
    probe_sets: &[(BiasType, Vec<Probe>)],
    lists: &BTreeMap<String, RecommendationList>,
    catalog: &Catalog,
) -> Result<(CityPools, Vec<(BiasType, String)>)> {
    let mut pools = CityPools {
        city: city.to_owned(),
        ..Default::default()
    };
    let mut missing = Vec::new();
    for (bias, probes) in probe_sets {
        let (pool, miss) = RecommendationPool::build(city, probes, lists, catalog)?;
        missing.extend(miss.into_iter().map(|m| (*bias, m)));
        match bias {
            BiasType::Names => pools.names = Some(pool),
            BiasType::SexualOrientation => pools.sexual_orientation = Some(pool),
            BiasType::Location => pools.location = Some(pool),
        }
    }
    Ok((pools, missing))
}

/// Runs every probe through `model` and pools the results.
pub fn audit_city_model(
    city: &str,
    model: &LmRec,
    catalog: &Catalog,
    probe_sets: &[(BiasType, Vec<Probe>)],
    k: usize,
) -> Result<CityPools> {
    let mut lists = BTreeMap::new();
    for (_, probes) in probe_sets {
        lists.extend(recommend_probes(model, probes, k)?);
    }
    Ok(pools_from_lists(city, probe_sets, &lists, catalog)?.0)
}
