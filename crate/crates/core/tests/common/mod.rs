#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use recbias::audit::{PoolItem, RecommendationPool};
use recbias::corpus::{Business, Catalog, PriceLevel};
use recbias::ranking::{Averaging, EvalInstance};

pub const AXIS: &str = "group";
pub const L: &str = "x";
pub const L_PRIME: &str = "y";

/// One pool item as plain data: polarity index (0 = l, 1 = l', 2 = unrelated),
/// price level 0 (unknown) or 1..=4, category bitmask.
pub type ItemSpec = (u8, u8, u16);

pub fn category_name(i: usize) -> String {
    format!("c{i}")
}

pub fn pool_from_specs(specs: &[ItemSpec], n_categories: usize) -> RecommendationPool {
    let label_sets: Vec<Arc<BTreeMap<String, String>>> = [L, L_PRIME, "z"]
        .iter()
        .map(|v| Arc::new([(AXIS.to_string(), v.to_string())].into_iter().collect()))
        .collect();
    let items = specs
        .iter()
        .enumerate()
        .map(|(i, &(pol, price, mask))| PoolItem {
            business_id: format!("b{i}"),
            name: format!("Venue {i}"),
            price_level: (price > 0).then(|| PriceLevel::new(price).unwrap()),
            categories: (0..n_categories)
                .filter(|c| mask & (1 << c) != 0)
                .map(category_name)
                .collect(),
            labels: Arc::clone(&label_sets[pol as usize % 3]),
            city: "Fixture".into(),
            probe_id: format!("p{}", i % 7),
            template_id: format!("t{}", i % 3),
        })
        .collect();
    RecommendationPool::new(items)
}

pub fn random_specs(rng: &mut ChaCha8Rng, max_items: usize, n_categories: usize) -> Vec<ItemSpec> {
    let n = rng.gen_range(1..=max_items);
    (0..n)
        .map(|_| {
            (
                rng.gen_range(0..2u8),
                rng.gen_range(0..=4u8),
                rng.gen_range(0..(1u16 << n_categories)),
            )
        })
        .collect()
}

/// Every item repeated `k` times.
pub fn replicate(specs: &[ItemSpec], k: usize) -> Vec<ItemSpec> {
    specs.iter().flat_map(|s| std::iter::repeat_n(*s, k)).collect()
}

// Brute-force oracles over the raw specs.

fn has_cat(mask: u16, c: usize) -> bool {
    mask & (1 << c) != 0
}

/// (P(l|m), P(l'|m)) or None when no item at `m` carries either polarity.
pub fn oracle_price_share(specs: &[ItemSpec], m: u8) -> Option<(f64, f64)> {
    let at_m: Vec<&ItemSpec> = specs.iter().filter(|s| s.1 == m && s.0 < 2).collect();
    if at_m.is_empty() {
        return None;
    }
    let l = at_m.iter().filter(|s| s.0 == 0).count() as f64;
    let lp = at_m.iter().filter(|s| s.0 == 1).count() as f64;
    Some((l / at_m.len() as f64, lp / at_m.len() as f64))
}

pub fn oracle_relatedness(specs: &[ItemSpec], c: usize, pol: u8) -> Option<f64> {
    let d: Vec<&ItemSpec> = specs.iter().filter(|s| s.0 == pol).collect();
    if d.is_empty() {
        return None;
    }
    Some(d.iter().filter(|s| has_cat(s.2, c)).count() as f64 / d.len() as f64)
}

fn oracle_union_relatedness(specs: &[ItemSpec], c: usize) -> Option<f64> {
    let d: Vec<&ItemSpec> = specs.iter().filter(|s| s.0 < 2).collect();
    if d.is_empty() {
        return None;
    }
    Some(d.iter().filter(|s| has_cat(s.2, c)).count() as f64 / d.len() as f64)
}

/// Outer None: a polarity is empty (an error). Inner None: undefined score.
pub fn oracle_difference(specs: &[ItemSpec], c: usize, l: u8, lp: u8) -> Option<Option<f64>> {
    let fl = oracle_relatedness(specs, c, l)?;
    let flp = oracle_relatedness(specs, c, lp)?;
    let fd = oracle_union_relatedness(specs, c)?;
    Some((fd > 0.0).then(|| (fl - flp) / fd))
}

pub fn oracle_ratio(specs: &[ItemSpec], c: usize, l: u8, lp: u8) -> Option<Option<f64>> {
    let fl = oracle_relatedness(specs, c, l)?;
    let flp = oracle_relatedness(specs, c, lp)?;
    Some((flp > 0.0).then(|| fl / flp))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

// Ranking fixtures and brute-force metrics.

pub fn ranking_catalog(rng: &mut ChaCha8Rng, venues: usize, categories: usize) -> Catalog {
    let businesses = (0..venues)
        .map(|i| {
            let mut cats: BTreeSet<String> = BTreeSet::new();
            while cats.is_empty() {
                for c in 0..categories {
                    if rng.gen_bool(0.25) {
                        cats.insert(category_name(c));
                    }
                }
            }
            Business {
                id: format!("v{i:02}"),
                name: format!("Venue {i}"),
                city: "Fixture".into(),
                price_level: None,
                categories: cats,
                review_count: 1,
            }
        })
        .collect();
    Catalog::new(businesses).unwrap()
}

pub fn random_instances(rng: &mut ChaCha8Rng, catalog: &Catalog, n: usize) -> Vec<EvalInstance> {
    let ids: Vec<String> = catalog.sorted_ids();
    (0..n)
        .map(|i| {
            let mut ranking = ids.clone();
            ranking.shuffle(rng);
            let len = rng.gen_range(1..=ids.len());
            ranking.truncate(len);
            EvalInstance {
                review_id: format!("r{i}"),
                true_business_id: ids.choose(rng).unwrap().clone(),
                ranking,
            }
        })
        .collect()
}

pub fn oracle_rank(inst: &EvalInstance) -> Option<usize> {
    for (i, id) in inst.ranking.iter().enumerate() {
        if *id == inst.true_business_id {
            return Some(i + 1);
        }
    }
    None
}

pub fn oracle_hit_rate(instances: &[EvalInstance], k: usize) -> f64 {
    let mut hits = 0.0;
    for inst in instances {
        if let Some(r) = oracle_rank(inst) {
            if r <= k {
                hits += 1.0;
            }
        }
    }
    hits / instances.len() as f64
}

pub fn oracle_mrr(instances: &[EvalInstance]) -> f64 {
    let mut total = 0.0;
    for inst in instances {
        if let Some(r) = oracle_rank(inst) {
            total += 1.0 / r as f64;
        }
    }
    total / instances.len() as f64
}

/// Per-class precision/recall/F1 by scanning every instance for every class.
pub fn oracle_prf(instances: &[EvalInstance], averaging: Averaging) -> (f64, f64, f64) {
    let mut classes: Vec<&str> = Vec::new();
    for inst in instances {
        for id in [inst.true_business_id.as_str(), inst.ranking[0].as_str()] {
            if !classes.contains(&id) {
                classes.push(id);
            }
        }
    }
    if averaging == Averaging::Micro {
        let correct = instances.iter().filter(|i| i.ranking[0] == i.true_business_id).count();
        let acc = correct as f64 / instances.len() as f64;
        return (acc, acc, acc);
    }
    let (mut ps, mut rs, mut fs, mut ws) = (0.0, 0.0, 0.0, 0.0);
    for c in classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        for inst in instances {
            let pred = inst.ranking[0] == c;
            let truth = inst.true_business_id == c;
            if pred && truth {
                tp += 1.0;
            } else if pred {
                fp += 1.0;
            } else if truth {
                fnn += 1.0;
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = if averaging == Averaging::Weighted {
            tp + fnn
        } else {
            1.0
        };
        ps += w * p;
        rs += w * r;
        fs += w * f;
        ws += w;
    }
    (ps / ws, rs / ws, fs / ws)
}

pub fn oracle_judgments(inst: &EvalInstance, catalog: &Catalog) -> Vec<bool> {
    let truth = &catalog.get(&inst.true_business_id).unwrap().categories;
    inst.ranking
        .iter()
        .map(|id| catalog.get(id).unwrap().categories.iter().any(|c| truth.contains(c)))
        .collect()
}

fn oracle_p_at(rel: &[bool], k: usize) -> f64 {
    let mut hits = 0.0;
    for (i, r) in rel.iter().enumerate() {
        if i < k && *r {
            hits += 1.0;
        }
    }
    hits / k as f64
}

/// (P@5, P@10, P@20, R-Prec, MAP, MRR, nDCG) of one judged ranking.
pub fn oracle_coverage_one(rel: &[bool]) -> [f64; 7] {
    let r = rel.iter().filter(|x| **x).count();
    if r == 0 {
        return [0.0; 7];
    }
    let mut ap = 0.0;
    for (i, x) in rel.iter().enumerate() {
        if *x {
            ap += oracle_p_at(rel, i + 1);
        }
    }
    ap /= r as f64;
    let first = rel.iter().position(|x| *x).unwrap();
    let mut ideal = rel.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let dcg = |v: &[bool]| -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, x)| if *x { 1.0 / ((i + 1) as f64 + 1.0).log2() } else { 0.0 })
            .sum()
    };
    [
        oracle_p_at(rel, 5),
        oracle_p_at(rel, 10),
        oracle_p_at(rel, 20),
        oracle_p_at(rel, r),
        ap,
        1.0 / (first + 1) as f64,
        dcg(rel) / dcg(&ideal),
    ]
}

pub fn oracle_coverage(judgments: &[Vec<bool>]) -> [f64; 7] {
    let mut sum = [0.0; 7];
    for j in judgments {
        for (s, v) in sum.iter_mut().zip(oracle_coverage_one(j)) {
            *s += v;
        }
    }
    sum.map(|s| s / judgments.len() as f64)
}

// Synthetic end-to-end runs.

pub struct CityAudit {
    pub city: String,
    pub pool: RecommendationPool,
}

/// Generates the synthetic corpus, trains one default model per city and
/// pools the top-`k` lists for every names probe.
pub fn synthetic_names_audit(plant: recbias::synthetic::Plant, seed: u64, k: usize) -> Vec<CityAudit> {
    use recbias::corpus::{CityCorpus, SplitRatios};
    use recbias::probes::{default_lexicons, default_templates, generate_probe_set, BiasType};
    use recbias::recommender::{train, TrainConfig, TrainingData};
    use recbias::synthetic::{default_groups, generate, SyntheticConfig};

    let (a, b) = default_groups();
    let config = SyntheticConfig {
        plant,
        seed,
        ..Default::default()
    };
    let corpus = generate(&config, &a, &b).unwrap();
    let catalog = Catalog::new(corpus.businesses.clone()).unwrap();
    let probes = generate_probe_set(BiasType::Names, &default_templates(), &default_lexicons()).unwrap();
    let probe_sets = vec![(BiasType::Names, probes)];
    let train_config = TrainConfig {
        seed,
        ..Default::default()
    };
    config
        .cities
        .iter()
        .map(|city| {
            let cc = CityCorpus::build(city, &catalog, &corpus.reviews, 0, SplitRatios::default(), seed).unwrap();
            let data = TrainingData::from_corpus(&cc).unwrap();
            let model = train(&data, &train_config).unwrap().model;
            let pools = recbias::pipeline::audit_city_model(city, &model, &cc.catalog, &probe_sets, k).unwrap();
            CityAudit {
                city: city.clone(),
                pool: pools.names.unwrap(),
            }
        })
        .collect()
}
